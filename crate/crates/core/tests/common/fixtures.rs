//! Hand-assembled byte fixtures for the three file formats.


#[rustfmt::skip]
pub const TILE: &[u8] = &[
    b'P', b'C', b'T', b'1', 3, 0, 0, 0,
    // (1, -2, 0.5) (0.25, 0, 1, 100) class 0
    0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0xC0, 0x00, 0x00, 0x00, 0x3F,
    0x00, 0x00, 0x80, 0x3E, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0xC8, 0x42, 0,
    // (2.5, 3, -0.75) (255, 10, 0.125, 0) class 3
    0x00, 0x00, 0x20, 0x40, 0x00, 0x00, 0x40, 0x40, 0x00, 0x00, 0x40, 0xBF,
    0x00, 0x00, 0x7F, 0x43, 0x00, 0x00, 0x20, 0x41, 0x00, 0x00, 0x00, 0x3E, 0x00, 0x00, 0x00, 0x00, 3,
    // (0, 0, 10) (1, 1, 1, 2.5) class 4
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x20, 0x41,
    0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x20, 0x40, 4,
];

#[rustfmt::skip]
pub const RASTER: &[u8] = &[
    b'R', b'A', b'S', b'1', 2, 0, 0, 0, 3, 0, 0, 0,
    0x00, 0x00, 0x00, 0x00, 0x82, 0x84, 0x1E, 0x41, // 500000.5
    0x00, 0x00, 0x00, 0x00, 0xF0, 0xB3, 0x5A, 0x41, // 7000000
    0x9A, 0x99, 0x99, 0x99, 0x99, 0x99, 0xB9, 0x3F, // 0.1
    0x00, 0x00, 0xC0, 0x3F, 0x00, 0x00, 0x80, 0xBE, 0x00, 0x00, 0xC0, 0x7F, // 1.5 -0.25 void
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x80, 0xBF, 0x00, 0x00, 0x00, 0x40, // 0 -1 2
];

#[rustfmt::skip]
pub const CHECKPOINT: &[u8] = &[
    b'S', b'P', b'C', b'K', 1, 0,
    1, 0, b'w', 2, 2, 0, 0, 0, 1, 0, 0, 0,
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xF0, 0x3F, // 1
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xE0, 0xBF, // -0.5
    3, 0, b'a', b'.', b'b', 1, 1, 0, 0, 0,
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x40, // 2
];

