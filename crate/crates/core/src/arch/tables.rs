//! Published layer tables for the 640x640x3 network, transcribed verbatim,
//! including the printed feature-map sizes that disagree with the shape chain.

use super::TensorShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrintedRow {
    pub name: &'static str,
    pub shape: TensorShape,
    pub params: u64,
}

const fn row(name: &'static str, h: usize, w: usize, c: usize, params: u64) -> PrintedRow {
    PrintedRow {
        name,
        shape: TensorShape::new(h, w, c),
        params,
    }
}

/// Downsampling path.
pub const ENCODER_TABLE: [PrintedRow; 15] = [
    row("Conv1_1", 640, 640, 32, 896),
    row("groupedconv_1", 640, 640, 32, 320),
    row("Pool1", 320, 320, 32, 0),
    row("Conv2_1", 320, 320, 64, 18496),
    row("groupedconv_2", 320, 320, 64, 640),
    row("Pool2_1", 160, 160, 64, 0),
    row("Conv3_1_1", 160, 160, 128, 73856),
    row("groupedconv_3", 160, 160, 128, 1280),
    row("Pool2_2", 80, 80, 128, 0),
    row("Conv3_1_2", 80, 80, 128, 147584),
    row("groupedconv_4", 80, 80, 128, 1280),
    row("Pool2_3", 40, 40, 128, 0),
    row("Conv3_1_3", 40, 40, 128, 147584),
    row("groupedconv_5", 80, 80, 128, 1280),
    row("Pool3", 20, 20, 128, 0),
];

/// Upsampling path, in execution order.
pub const DECODER_TABLE: [PrintedRow; 15] = [
    row("decoder3_unpool", 40, 40, 128, 0),
    row("decoder3_conv2_1_3", 40, 40, 128, 147584),
    row("groupedconv_6", 40, 40, 256, 1280),
    row("decoder2_unpool_3", 80, 80, 128, 0),
    row("decoder3_conv2_1_2", 80, 80, 128, 147584),
    row("groupedconv_7", 80, 80, 128, 1280),
    row("decoder2_unpool_2", 160, 160, 128, 0),
    row("decoder3_conv2_1_1", 160, 160, 128, 147584),
    row("groupedconv_8", 160, 160, 128, 1280),
    row("decoder2_unpool_1", 320, 320, 64, 0),
    row("decoder3_conv2", 320, 320, 64, 36928),
    row("groupedconv_9", 320, 320, 64, 640),
    row("decoder1_unpool", 640, 640, 32, 0),
    row("decoder1_conv2", 320, 320, 64, 9248),
    row("groupedconv_10", 320, 320, 64, 320),
];

/// Input size the tables were printed for.
pub const TABLE_INPUT: TensorShape = TensorShape::new(640, 640, 3);

pub fn lookup(name: &str) -> Option<&'static PrintedRow> {
    ENCODER_TABLE
        .iter()
        .chain(DECODER_TABLE.iter())
        .find(|r| r.name == name)
}

/// Sum of every printed parameter count across both tables.
pub fn printed_total() -> u64 {
    ENCODER_TABLE
        .iter()
        .chain(DECODER_TABLE.iter())
        .map(|r| r.params)
        .sum()
}
