use crate::error::{Error, Result};

/// RGB image, row-major `(row, col, channel)`, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * Self::CHANNELS],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * Self::CHANNELS {
            return Err(Error::Input(format!(
                "{}x{} rgb image needs {} values, got {}",
                width,
                height,
                width * height * Self::CHANNELS,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn pixel(&self, col: usize, row: usize) -> [f64; 3] {
        let i = (row * self.width + col) * Self::CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, col: usize, row: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * Self::CHANNELS;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rounds every channel to the nearest multiple of 1/255 in `[0, 1]`,
    /// the precision an 8-bit PPM file can hold.
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| quantize(v) as f64 / 255.0).collect(),
        }
    }

    /// ASCII PPM (P3), max value 255, one pixel row per line.
    pub fn to_ppm(&self) -> String {
        let mut s = format!("P3\n{} {}\n255\n", self.width, self.height);
        for row in 0..self.height {
            let line: Vec<String> = (0..self.width * Self::CHANNELS)
                .map(|i| quantize(self.data[row * self.width * Self::CHANNELS + i]).to_string())
                .collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_ppm(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let bad = |m: &str| Error::parse("ppm", m.to_string());
        if tokens.next() != Some("P3") {
            return Err(bad("missing P3 magic"));
        }
        let mut num = || -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| bad("unexpected end of data"))?
                .parse()
                .map_err(|_| bad("non-integer token"))
        };
        let (w, h, max) = (num()?, num()?, num()?);
        if max == 0 {
            return Err(bad("max value 0"));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for _ in 0..w * h * 3 {
            let v = num()?;
            if v > max {
                return Err(bad("sample above max value"));
            }
            data.push(v as f64 / max as f64);
        }
        Self::from_data(w, h, data)
    }
}

fn quantize(v: f64) -> u8 {
    if v.is_finite() {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_of_quantized_image() {
        let mut img = Image::new(2, 2);
        img.set_pixel(1, 0, [0.1, 0.5, 1.0]);
        img.set_pixel(0, 1, [0.9, 0.0, 0.33]);
        let q = img.quantized();
        assert_eq!(Image::from_ppm(&q.to_ppm()).unwrap(), q);
        assert!(q.to_ppm().starts_with("P3\n2 2\n255\n"));
    }
}
