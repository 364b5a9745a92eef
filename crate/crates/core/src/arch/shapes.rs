use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::spec::{NetworkSpec, SkipMode, TensorShape, NUM_BLOCKS};
use super::ArchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv,
    GroupedConv,
    Pool,
    Fold,
    Unpool,
    Merge,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub name: String,
    pub kind: LayerKind,
    pub shape: TensorShape,
}

/// Output shape of every layer in execution order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShapeTrace {
    pub entries: Vec<TraceEntry>,
}

impl ShapeTrace {
    pub fn get(&self, name: &str) -> Option<TensorShape> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.shape)
    }

    pub fn output(&self) -> TensorShape {
        self.entries
            .last()
            .expect("trace starts with the input")
            .shape
    }

    fn push(&mut self, name: &str, kind: LayerKind, shape: TensorShape) {
        self.entries.push(TraceEntry {
            name: name.to_string(),
            kind,
            shape,
        });
    }
}

fn expect_channels(layer: &str, expected: usize, found: usize) -> Result<(), ArchError> {
    if expected != found {
        return Err(ArchError::ChannelMismatch {
            layer: layer.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}

fn invalid(layer: &str, reason: impl Into<String>) -> ArchError {
    ArchError::InvalidLayer {
        layer: layer.to_string(),
        reason: reason.into(),
    }
}

/// Propagates `input` through `spec`, validating every layer on the way.
pub fn infer_shapes(spec: &NetworkSpec, input: TensorShape) -> Result<ShapeTrace, ArchError> {
    if input != spec.input {
        return Err(ArchError::InputMismatch {
            expected: spec.input,
            found: input,
        });
    }
    input.validate_network_input()?;
    if spec.num_classes < 2 {
        return Err(ArchError::TooFewClasses(spec.num_classes));
    }
    if spec.encoder.len() != NUM_BLOCKS || spec.decoder.len() != NUM_BLOCKS {
        return Err(invalid(
            "network",
            format!(
                "expected {NUM_BLOCKS} encoder and {NUM_BLOCKS} decoder blocks, found {} and {}",
                spec.encoder.len(),
                spec.decoder.len()
            ),
        ));
    }
    for skip in &spec.skips {
        if skip.encoder_block == 0 || skip.encoder_block > NUM_BLOCKS {
            return Err(ArchError::InvalidSkip {
                source_block: skip.encoder_block,
                reason: "encoder block index out of range".into(),
            });
        }
        if !spec.decoder.iter().any(|d| d.level == skip.decoder_level) {
            return Err(ArchError::InvalidSkip {
                source_block: skip.encoder_block,
                reason: format!("no decoder block at level {}", skip.decoder_level),
            });
        }
    }

    let mut trace = ShapeTrace::default();
    trace.push("input", LayerKind::Input, input);
    let mut cur = input;

    // (pool name, shape entering the pool, shape leaving it), nested first-in/last-out.
    let mut pool_stack: Vec<(String, TensorShape, TensorShape)> = Vec::new();
    let mut taps: HashMap<usize, TensorShape> = HashMap::new();

    for (i, block) in spec.encoder.iter().enumerate() {
        let conv = &block.conv;
        if conv.kernel != [3, 3] {
            return Err(invalid(&conv.name, "only 3x3 kernels are supported"));
        }
        expect_channels(&conv.name, conv.in_channels, cur.channels)?;
        if conv.out_channels == 0 {
            return Err(invalid(&conv.name, "zero output channels"));
        }
        cur = cur.with_channels(conv.out_channels);
        taps.insert(i + 1, cur);
        trace.push(&conv.name, LayerKind::Conv, cur);

        let g = &block.grouped;
        expect_channels(&g.name, g.channels, cur.channels)?;
        if g.groups != g.channels {
            return Err(invalid(&g.name, "groups must equal channels"));
        }
        trace.push(&g.name, LayerKind::GroupedConv, cur);

        let pool = &block.pool;
        if pool.window != 2 {
            return Err(invalid(&pool.name, "only 2x2 windows are supported"));
        }
        let pooled = TensorShape::new(cur.height / 2, cur.width / 2, cur.channels);
        pool_stack.push((pool.name.clone(), cur, pooled));
        cur = pooled;
        trace.push(&pool.name, LayerKind::Pool, cur);
    }

    for block in &spec.decoder {
        if let Some(fold) = &block.fold {
            expect_channels(&fold.name, fold.in_channels, cur.channels)?;
            if fold.out_channels == 0 || fold.in_channels % fold.out_channels != 0 {
                return Err(invalid(
                    &fold.name,
                    "input channels must be a multiple of output channels",
                ));
            }
            cur = cur.with_channels(fold.out_channels);
            trace.push(&fold.name, LayerKind::Fold, cur);
        }

        let unpool = &block.unpool;
        let (pool_name, pool_in, pool_out) = pool_stack
            .pop()
            .ok_or_else(|| invalid(&unpool.name, "no pooling layer left to invert"))?;
        if pool_name != unpool.pool {
            return Err(invalid(
                &unpool.name,
                format!(
                    "inverts `{}` but the innermost open pool is `{pool_name}`",
                    unpool.pool
                ),
            ));
        }
        expect_channels(&unpool.name, pool_out.channels, cur.channels)?;
        if (cur.height, cur.width) != (pool_out.height, pool_out.width) {
            return Err(invalid(
                &unpool.name,
                "spatial size differs from its pool output",
            ));
        }
        cur = pool_in;
        trace.push(&unpool.name, LayerKind::Unpool, cur);

        if let Some(skip) = spec.skip_into(block.level) {
            let tap = taps[&skip.encoder_block];
            if (tap.height, tap.width) != (cur.height, cur.width) {
                return Err(ArchError::InvalidSkip {
                    source_block: skip.encoder_block,
                    reason: format!(
                        "source {tap} does not match decoder level {} entry {cur}",
                        block.level
                    ),
                });
            }
            cur = match spec.skip_mode {
                SkipMode::Add => {
                    if tap.channels != cur.channels {
                        return Err(ArchError::InvalidSkip {
                            source_block: skip.encoder_block,
                            reason: format!(
                                "add merge needs equal channels ({} vs {})",
                                tap.channels, cur.channels
                            ),
                        });
                    }
                    cur
                }
                SkipMode::Concat => cur.with_channels(cur.channels + tap.channels),
            };
            trace.push(&block.merge_name(), LayerKind::Merge, cur);
        }

        let conv = &block.conv;
        if conv.kernel != [3, 3] {
            return Err(invalid(&conv.name, "only 3x3 kernels are supported"));
        }
        expect_channels(&conv.name, conv.in_channels, cur.channels)?;
        if conv.out_channels == 0 {
            return Err(invalid(&conv.name, "zero output channels"));
        }
        cur = cur.with_channels(conv.out_channels);
        trace.push(&conv.name, LayerKind::Conv, cur);

        let g = &block.grouped;
        expect_channels(&g.name, g.channels, cur.channels)?;
        if g.groups != g.channels {
            return Err(invalid(&g.name, "groups must equal channels"));
        }
        trace.push(&g.name, LayerKind::GroupedConv, cur);
    }

    let head = &spec.head;
    expect_channels(&head.name, head.in_channels, cur.channels)?;
    if head.num_classes != spec.num_classes {
        return Err(invalid(
            &head.name,
            "num_classes disagrees with the network",
        ));
    }
    cur = cur.with_channels(head.num_classes);
    trace.push(&head.name, LayerKind::Head, cur);

    if (cur.height, cur.width) != (input.height, input.width) {
        return Err(invalid("network", "output resolution differs from input"));
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::default_network_spec;

    fn shape(h: usize, c: usize) -> TensorShape {
        TensorShape::new(h, h, c)
    }

    #[test]
    fn table_chain_at_640() {
        let spec = default_network_spec(shape(640, 3), 3, SkipMode::Add).unwrap();
        let trace = infer_shapes(&spec, spec.input).unwrap();
        assert_eq!(trace.get("groupedconv_3"), Some(shape(160, 128)));
        assert_eq!(trace.get("Pool1"), Some(shape(320, 32)));
        assert_eq!(trace.get("Pool3"), Some(shape(20, 128)));
        assert_eq!(trace.get("decoder2_unpool_1"), Some(shape(320, 64)));
        assert_eq!(trace.output(), shape(640, 3));
    }

    #[test]
    fn tiny_input_reaches_one_pixel() {
        let spec = default_network_spec(shape(32, 3), 2, SkipMode::Concat).unwrap();
        let trace = infer_shapes(&spec, spec.input).unwrap();
        assert_eq!(trace.get("Pool3"), Some(shape(1, 128)));
        assert_eq!(trace.output(), shape(32, 2));
    }

    #[test]
    fn wrong_in_channels_names_layer() {
        let mut spec = default_network_spec(shape(64, 3), 3, SkipMode::Add).unwrap();
        spec.encoder[2].conv.in_channels = 63;
        let err = infer_shapes(&spec, spec.input).unwrap_err();
        assert_eq!(
            err,
            ArchError::ChannelMismatch {
                layer: "Conv3_1_1".into(),
                expected: 63,
                found: 64
            }
        );
    }

    #[test]
    fn unpool_must_nest() {
        let mut spec = default_network_spec(shape(64, 3), 3, SkipMode::Add).unwrap();
        spec.decoder[0].unpool.pool = "Pool1".into();
        assert!(matches!(
            infer_shapes(&spec, spec.input),
            Err(ArchError::InvalidLayer { .. })
        ));
    }

    #[test]
    fn add_mode_rejects_channel_disagreement() {
        let mut spec = default_network_spec(shape(64, 3), 3, SkipMode::Add).unwrap();
        spec.decoder[3].fold = None;
        // unpool now receives 128 channels while Pool2_1 produced 64
        assert!(matches!(
            infer_shapes(&spec, spec.input),
            Err(ArchError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn input_must_match_spec() {
        let spec = default_network_spec(shape(64, 3), 3, SkipMode::Add).unwrap();
        assert!(matches!(
            infer_shapes(&spec, shape(32, 3)),
            Err(ArchError::InputMismatch { .. })
        ));
    }
}
