#![allow(dead_code)]

pub mod oracle;

use dmalign_core::pipeline::EditOutcome;
use image::RgbImage;

/// Every pixel outside the refined mask equals the input, and the reported
/// background PWMSE is exactly zero.
pub fn assert_background_untouched(input: &RgbImage, outcome: &EditOutcome) {
    let mask = &outcome.refined.mask;
    for (x, y, p) in input.enumerate_pixels() {
        if !mask.get(x as usize, y as usize) {
            assert_eq!(p, outcome.output.get_pixel(x, y), "background pixel ({x}, {y}) changed");
        }
    }
    if let Some(bg) = &outcome.metrics.background {
        assert_eq!(bg.pwmse, 0.0);
    }
}
