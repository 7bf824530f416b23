use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::RgbImage;

/// Per-scanner color response: saturation about luma, then per-channel
/// `gain · v^gamma + bias` on `[0, 1]` values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScannerStylePreset {
    pub gain: [f64; 3],
    pub bias: [f64; 3],
    pub gamma: f64,
    pub saturation: f64,
}

impl ScannerStylePreset {
    pub const IDENTITY: ScannerStylePreset = ScannerStylePreset {
        gain: [1.0; 3],
        bias: [0.0; 3],
        gamma: 1.0,
        saturation: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = self.gain.iter().all(|g| (0.6..=1.4).contains(g))
            && self.bias.iter().all(|b| (-0.15..=0.15).contains(b))
            && (0.7..=1.4).contains(&self.gamma)
            && (0.5..=1.5).contains(&self.saturation);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("style preset out of range: {self:?}")))
        }
    }

    /// Parameters as a flat vector: gains, biases, gamma, saturation.
    pub fn as_vector(&self) -> [f64; 8] {
        [
            self.gain[0],
            self.gain[1],
            self.gain[2],
            self.bias[0],
            self.bias[1],
            self.bias[2],
            self.gamma,
            self.saturation,
        ]
    }

    #[inline]
    pub fn apply_pixel(&self, rgb: [u8; 3]) -> [u8; 3] {
        let v = rgb.map(|c| c as f64 / 255.0);
        let luma = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
        let mut out = [0u8; 3];
        for ch in 0..3 {
            let s = (luma + self.saturation * (v[ch] - luma)).clamp(0.0, 1.0);
            let t = (self.gain[ch] * libm::pow(s, self.gamma) + self.bias[ch]).clamp(0.0, 1.0);
            out[ch] = libm::round(t * 255.0) as u8;
        }
        out
    }
}

/// Default presets for scanners 0–3 and the held-out scanner 4.
///
/// Scanner 4 sits at the centre of the training presets except for a
/// stronger blue gain and a lower saturation than any of them.
pub const DEFAULT_PRESETS: [ScannerStylePreset; 5] = [
    ScannerStylePreset {
        gain: [1.10, 0.88, 1.05],
        bias: [0.02, -0.04, 0.03],
        gamma: 0.95,
        saturation: 1.20,
    },
    ScannerStylePreset {
        gain: [0.88, 0.82, 1.18],
        bias: [-0.04, -0.02, 0.08],
        gamma: 1.10,
        saturation: 0.95,
    },
    ScannerStylePreset {
        gain: [1.22, 1.00, 0.90],
        bias: [0.05, 0.00, -0.06],
        gamma: 1.00,
        saturation: 1.35,
    },
    ScannerStylePreset {
        gain: [1.00, 0.95, 0.98],
        bias: [0.00, 0.02, 0.00],
        gamma: 1.28,
        saturation: 0.75,
    },
    ScannerStylePreset {
        gain: [1.05, 0.91, 1.25],
        bias: [0.01, -0.01, 0.01],
        gamma: 1.08,
        saturation: 0.65,
    },
];

/// Applies a scanner preset to every pixel.
pub fn apply_scanner_style(image: &RgbImage, preset: &ScannerStylePreset) -> RgbImage {
    let mut out = image.clone();
    for px in out.data.chunks_exact_mut(3) {
        let rgb = preset.apply_pixel([px[0], px[1], px[2]]);
        px.copy_from_slice(&rgb);
    }
    out
}
