use rand::Rng;

pub const CANVAS_SIZE: usize = 60;
pub const ITEM_SIZE: usize = 28;
/// Mask threshold for digit-like sources.
pub const DIGIT_THRESHOLD: u8 = 150;
/// Mask threshold for apparel-like sources.
pub const APPAREL_THRESHOLD: u8 = 10;

/// A 28×28 grayscale raster with its class label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceImage {
    pub label: u8,
    pub pixels: Vec<u8>,
}

/// Composited intensities in `[0, 1]` and class ids (0 = background), row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    pub pixels: Vec<f64>,
    pub mask: Vec<u8>,
}

impl Canvas {
    pub fn blank() -> Self {
        Canvas { pixels: vec![0.0; CANVAS_SIZE * CANVAS_SIZE], mask: vec![0; CANVAS_SIZE * CANVAS_SIZE] }
    }

    pub fn pixel(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * CANVAS_SIZE + col]
    }

    pub fn class(&self, row: usize, col: usize) -> u8 {
        self.mask[row * CANVAS_SIZE + col]
    }
}

/// Top-left corner of a pasted item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub row: usize,
    pub col: usize,
}

/// Pastes `item` at `at`, compositing by per-pixel max; pixels at or above
/// `threshold` take the item's class `label + 1`.
pub fn paste_at(canvas: &mut Canvas, item: &SourceImage, at: Placement, threshold: u8) {
    for r in 0..ITEM_SIZE {
        for c in 0..ITEM_SIZE {
            let v = item.pixels[r * ITEM_SIZE + c];
            let k = (at.row + r) * CANVAS_SIZE + at.col + c;
            canvas.pixels[k] = canvas.pixels[k].max(v as f64 / 255.0);
            if v >= threshold {
                canvas.mask[k] = item.label + 1;
            }
        }
    }
}

/// Pastes every item at a uniformly random in-bounds position.
pub fn paste_items<R: Rng + ?Sized>(items: &[&SourceImage], threshold: u8, rng: &mut R) -> (Canvas, Vec<Placement>) {
    let mut canvas = Canvas::blank();
    let mut placements = Vec::with_capacity(items.len());
    let span = CANVAS_SIZE - ITEM_SIZE;
    for item in items {
        let at = Placement { row: rng.gen_range(0..=span), col: rng.gen_range(0..=span) };
        paste_at(&mut canvas, item, at, threshold);
        placements.push(at);
    }
    (canvas, placements)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(label: u8) -> SourceImage {
        SourceImage { label, pixels: (0..ITEM_SIZE * ITEM_SIZE).map(|i| (i % 256) as u8).collect() }
    }

    #[test]
    fn blank_item_gives_blank_canvas() {
        let item = SourceImage { label: 3, pixels: vec![0; ITEM_SIZE * ITEM_SIZE] };
        let (c, _) = paste_items(&[&item], 150, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(c, Canvas::blank());
    }

    #[test]
    fn single_item_lands_at_its_placement() {
        let item = ramp(4);
        let (c, at) = paste_items(&[&item], 150, &mut ChaCha8Rng::seed_from_u64(7));
        let at = at[0];
        for r in 0..CANVAS_SIZE {
            for col in 0..CANVAS_SIZE {
                let inside = (at.row..at.row + ITEM_SIZE).contains(&r) && (at.col..at.col + ITEM_SIZE).contains(&col);
                let want = if inside { item.pixels[(r - at.row) * ITEM_SIZE + col - at.col] as f64 / 255.0 } else { 0.0 };
                assert_eq!(c.pixel(r, col), want);
            }
        }
    }

    #[test]
    fn mask_follows_threshold() {
        let a = ramp(1);
        let b = ramp(6);
        let (c, _) = paste_items(&[&a, &b], 150, &mut ChaCha8Rng::seed_from_u64(3));
        for (p, m) in c.pixels.iter().zip(&c.mask) {
            assert_eq!(*m != 0, *p >= 150.0 / 255.0 - 1e-12);
        }
    }
}
