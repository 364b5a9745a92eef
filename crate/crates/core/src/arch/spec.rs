use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ArchError;

/// Number of encoder blocks, and of decoder blocks.
pub const NUM_BLOCKS: usize = 5;

/// Channel count produced by each encoder block, shallowest first.
const ENCODER_CHANNELS: [usize; NUM_BLOCKS] = [32, 64, 128, 128, 128];

/// Conv output channels of the decoder blocks, in execution order (deepest first).
const DECODER_CHANNELS: [usize; NUM_BLOCKS] = [128, 128, 128, 64, 32];

const ENCODER_CONV_NAMES: [&str; NUM_BLOCKS] =
    ["Conv1_1", "Conv2_1", "Conv3_1_1", "Conv3_1_2", "Conv3_1_3"];
const POOL_NAMES: [&str; NUM_BLOCKS] = ["Pool1", "Pool2_1", "Pool2_2", "Pool2_3", "Pool3"];

// Decoder names, execution order (level 5 first).
const UNPOOL_NAMES: [&str; NUM_BLOCKS] = [
    "decoder3_unpool",
    "decoder2_unpool_3",
    "decoder2_unpool_2",
    "decoder2_unpool_1",
    "decoder1_unpool",
];
const DECODER_CONV_NAMES: [&str; NUM_BLOCKS] = [
    "decoder3_conv2_1_3",
    "decoder3_conv2_1_2",
    "decoder3_conv2_1_1",
    "decoder3_conv2",
    "decoder1_conv2",
];
const FOLD_NAMES: [&str; NUM_BLOCKS] = [
    "decoder3_fold",
    "decoder2_fold_3",
    "decoder2_fold_2",
    "decoder2_fold_1",
    "decoder1_fold",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl TensorShape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn num_elements(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Self { channels, ..self }
    }

    /// Checks the network-input invariants: positive dims, spatial dims divisible by 32.
    pub fn validate_network_input(&self) -> Result<(), ArchError> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(ArchError::ZeroDimension(*self));
        }
        let factor = 1 << NUM_BLOCKS;
        if !self.height.is_multiple_of(factor) || !self.width.is_multiple_of(factor) {
            return Err(ArchError::InputNotDivisible {
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// How a skip feature map is merged into the decoder stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    /// Channel concatenation `[decoder, skip]`; channel counts add up.
    #[default]
    Concat,
    /// Element-wise sum; channel counts must agree.
    Add,
}

impl fmt::Display for SkipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipMode::Concat => "concat",
            SkipMode::Add => "add",
        })
    }
}

impl FromStr for SkipMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "concat" => Ok(SkipMode::Concat),
            "add" => Ok(SkipMode::Add),
            other => Err(format!("unknown skip mode `{other}` (expected concat|add)")),
        }
    }
}

/// 3x3, stride 1, same-padded convolution with bias, followed by a rectifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
}

impl ConvLayerSpec {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize) -> Self {
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel: [3, 3],
        }
    }
}

/// 3x3 grouped convolution with bias and rectifier. With `groups == channels`
/// every channel is filtered by its own single-channel kernel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupedConvLayerSpec {
    pub name: String,
    pub channels: usize,
    pub groups: usize,
}

impl GroupedConvLayerSpec {
    pub fn channel_wise(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            groups: channels,
        }
    }
}

/// 2x2 max pooling with stride 2; records argmax indices for its paired unpool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolLayerSpec {
    pub name: String,
    pub window: usize,
}

/// Max unpooling that scatters values back to the argmax positions of `pool`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnpoolLayerSpec {
    pub name: String,
    pub pool: String,
}

/// Parameter-free channel reduction: output channel `c` is the mean of input
/// channels `c*r .. (c+1)*r` with `r = in_channels / out_channels`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
}

/// 1x1 classification convolution followed by a per-pixel softmax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub in_channels: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderBlockSpec {
    pub conv: ConvLayerSpec,
    pub grouped: GroupedConvLayerSpec,
    pub pool: PoolLayerSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderBlockSpec {
    /// Encoder level whose resolution this block restores (5 = deepest).
    pub level: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<FoldSpec>,
    pub unpool: UnpoolLayerSpec,
    pub conv: ConvLayerSpec,
    pub grouped: GroupedConvLayerSpec,
}

impl DecoderBlockSpec {
    /// Name used for the skip merge point in shape traces.
    pub fn merge_name(&self) -> String {
        format!("{}_merge", self.unpool.name)
    }
}

/// Skip route from the first convolution of encoder block `encoder_block`
/// (before pooling) to the entry of the decoder block with `level == decoder_level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipPath {
    pub encoder_block: usize,
    pub decoder_level: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: TensorShape,
    pub num_classes: usize,
    pub skip_mode: SkipMode,
    pub encoder: Vec<EncoderBlockSpec>,
    pub decoder: Vec<DecoderBlockSpec>,
    pub skips: Vec<SkipPath>,
    pub head: HeadSpec,
}

/// Borrowed view of any layer, used for parameter counting and traversal.
#[derive(Debug, Clone, Copy)]
pub enum LayerRef<'a> {
    Conv(&'a ConvLayerSpec),
    Grouped(&'a GroupedConvLayerSpec),
    Pool(&'a PoolLayerSpec),
    Unpool(&'a UnpoolLayerSpec),
    Fold(&'a FoldSpec),
    Head(&'a HeadSpec),
}

impl LayerRef<'_> {
    pub fn name(&self) -> &str {
        match self {
            LayerRef::Conv(l) => &l.name,
            LayerRef::Grouped(l) => &l.name,
            LayerRef::Pool(l) => &l.name,
            LayerRef::Unpool(l) => &l.name,
            LayerRef::Fold(l) => &l.name,
            LayerRef::Head(l) => &l.name,
        }
    }
}

/// Trainable parameter count of a single layer (weights + biases).
pub fn count_parameters(layer: LayerRef<'_>) -> u64 {
    match layer {
        LayerRef::Conv(c) => {
            let taps = (c.kernel[0] * c.kernel[1]) as u64;
            taps * c.in_channels as u64 * c.out_channels as u64 + c.out_channels as u64
        }
        LayerRef::Grouped(g) => {
            let per_group_in = g.channels.checked_div(g.groups).unwrap_or(0) as u64;
            9 * per_group_in * g.channels as u64 + g.channels as u64
        }
        LayerRef::Head(h) => (h.in_channels * h.num_classes + h.num_classes) as u64,
        LayerRef::Pool(_) | LayerRef::Unpool(_) | LayerRef::Fold(_) => 0,
    }
}

/// Builds the published five-block encoder / five-block decoder layout.
pub fn default_network_spec(
    input: TensorShape,
    num_classes: usize,
    skip_mode: SkipMode,
) -> Result<NetworkSpec, ArchError> {
    input.validate_network_input()?;
    if num_classes < 2 {
        return Err(ArchError::TooFewClasses(num_classes));
    }

    let mut encoder = Vec::with_capacity(NUM_BLOCKS);
    let mut channels = input.channels;
    for (i, &out) in ENCODER_CHANNELS.iter().enumerate() {
        encoder.push(EncoderBlockSpec {
            conv: ConvLayerSpec::new(ENCODER_CONV_NAMES[i], channels, out),
            grouped: GroupedConvLayerSpec::channel_wise(format!("groupedconv_{}", i + 1), out),
            pool: PoolLayerSpec {
                name: POOL_NAMES[i].to_string(),
                window: 2,
            },
        });
        channels = out;
    }

    let mut decoder = Vec::with_capacity(NUM_BLOCKS);
    for (j, &out) in DECODER_CHANNELS.iter().enumerate() {
        let level = NUM_BLOCKS - j;
        let pooled_channels = ENCODER_CHANNELS[level - 1];
        let fold = (channels != pooled_channels).then(|| FoldSpec {
            name: FOLD_NAMES[j].to_string(),
            in_channels: channels,
            out_channels: pooled_channels,
        });
        let merged = match skip_mode {
            SkipMode::Add => pooled_channels,
            SkipMode::Concat => 2 * pooled_channels,
        };
        decoder.push(DecoderBlockSpec {
            level,
            fold,
            unpool: UnpoolLayerSpec {
                name: UNPOOL_NAMES[j].to_string(),
                pool: POOL_NAMES[level - 1].to_string(),
            },
            conv: ConvLayerSpec::new(DECODER_CONV_NAMES[j], merged, out),
            grouped: GroupedConvLayerSpec::channel_wise(
                format!("groupedconv_{}", NUM_BLOCKS + j + 1),
                out,
            ),
        });
        channels = out;
    }

    let skips = (1..=NUM_BLOCKS)
        .map(|i| SkipPath {
            encoder_block: i,
            decoder_level: i,
        })
        .collect();

    Ok(NetworkSpec {
        input,
        num_classes,
        skip_mode,
        encoder,
        decoder,
        skips,
        head: HeadSpec {
            name: "dice_classifier".to_string(),
            in_channels: channels,
            num_classes,
        },
    })
}

impl NetworkSpec {
    /// All layers in execution order (merge points carry no parameters and are omitted).
    pub fn layers(&self) -> Vec<LayerRef<'_>> {
        let mut out = Vec::new();
        for block in &self.encoder {
            out.push(LayerRef::Conv(&block.conv));
            out.push(LayerRef::Grouped(&block.grouped));
            out.push(LayerRef::Pool(&block.pool));
        }
        for block in &self.decoder {
            if let Some(fold) = &block.fold {
                out.push(LayerRef::Fold(fold));
            }
            out.push(LayerRef::Unpool(&block.unpool));
            out.push(LayerRef::Conv(&block.conv));
            out.push(LayerRef::Grouped(&block.grouped));
        }
        out.push(LayerRef::Head(&self.head));
        out
    }

    pub fn total_parameters(&self) -> u64 {
        self.layers().into_iter().map(count_parameters).sum()
    }

    /// The skip path feeding decoder `level`, if any.
    pub fn skip_into(&self, level: usize) -> Option<&SkipPath> {
        self.skips.iter().find(|s| s.decoder_level == level)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("network spec is always representable as TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self, ArchError> {
        toml::from_str(text).map_err(|e| ArchError::Parse(e.to_string()))
    }

    /// Stable hex digest of the spec, used to bind checkpoints to architectures.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
