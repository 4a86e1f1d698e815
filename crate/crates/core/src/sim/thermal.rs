//! GPU protective downclocking as a function of temperature.

/// Nominal (unthrottled) clock in GHz.
pub const NOMINAL_FREQ_GHZ: f64 = 1.93;

/// Measured (temperature °C, clock GHz) anchor points.
pub const ANCHORS: [(f64, f64); 4] = [(50.0, 1.93), (60.0, 1.93), (69.0, 1.78), (77.0, 1.38)];

/// Piecewise-linear clock curve through [`ANCHORS`], flat outside them.
pub fn thermal_freq(temp_c: f64) -> f64 {
    let (first_t, first_f) = ANCHORS[0];
    if temp_c <= first_t {
        return first_f;
    }
    for pair in ANCHORS.windows(2) {
        let (t0, f0) = pair[0];
        let (t1, f1) = pair[1];
        if temp_c <= t1 {
            return f0 + (temp_c - t0) / (t1 - t0) * (f1 - f0);
        }
    }
    ANCHORS[ANCHORS.len() - 1].1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchors_exact() {
        for (t, f) in ANCHORS {
            assert_eq!(thermal_freq(t), f);
        }
    }

    #[test]
    fn interpolates_between_anchors() {
        assert!((thermal_freq(73.0) - 1.58).abs() < 1e-12);
    }

    #[test]
    fn clamps_outside() {
        assert_eq!(thermal_freq(0.0), 1.93);
        assert_eq!(thermal_freq(120.0), 1.38);
    }
}
