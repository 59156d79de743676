use super::DecisionError;

/// Log-utility demand for a single binary event contract.
///
/// With cash `y` and `z` contracts held, buying `x` at price `q` leaves
/// `y + z + (1 - q) x` if the event occurs and `y - q x` otherwise. Setting
/// the derivative of `p log(W1) + (1 - p) log(W0)` to zero gives
/// `x = (p (1 - q) y - (1 - p) q (y + z)) / (q (1 - q))`, which is then
/// clipped to the region where both wealths are non-negative.
pub fn binary_log_closed_form(p: f64, q: f64, y: f64, z: f64) -> Result<f64, DecisionError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(DecisionError::DegeneratePrice(q));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(DecisionError::BadProbability(p));
    }
    let floor = y.min(y + z);
    if floor < 0.0 {
        return Err(DecisionError::Insolvent(floor));
    }
    let x = (p * (1.0 - q) * y - (1.0 - p) * q * (y + z)) / (q * (1.0 - q));
    let lo = -(y + z) / (1.0 - q);
    let hi = y / q;
    Ok(x.clamp(lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_solved_values() {
        assert_eq!(binary_log_closed_form(0.4, 0.4, 1000.0, 0.0).unwrap(), 0.0);
        // p(1-q)/W1 = (1-p)q/W0 with W1 = 1000 + 0.71x, W0 = 1000 - 0.29x
        // gives x = (0.213 - 0.203) * 1000 / 0.2059 = 48.5672...
        let x = binary_log_closed_form(0.3, 0.29, 1000.0, 0.0).unwrap();
        assert!((x - 10_000.0 / 205.9).abs() < 1e-9);
        assert_eq!(libm::round(x * 100.0) / 100.0, 48.57);
        // (0.255 - 0.245) * 1000 / 0.2499 = 40.016...
        let x = binary_log_closed_form(0.5, 0.49, 1000.0, 0.0).unwrap();
        assert_eq!(libm::round(x * 100.0) / 100.0, 40.02);
    }

    #[test]
    fn clipping_and_errors() {
        // Certainty drives the position to the solvency boundary.
        assert!((binary_log_closed_form(1.0, 0.5, 10.0, 0.0).unwrap() - 20.0).abs() < 1e-12);
        assert!((binary_log_closed_form(0.0, 0.5, 10.0, 0.0).unwrap() + 20.0).abs() < 1e-12);
        assert!(binary_log_closed_form(0.5, 0.0, 10.0, 0.0).is_err());
        assert!(binary_log_closed_form(0.5, 1.0, 10.0, 0.0).is_err());
        assert!(binary_log_closed_form(0.5, 0.5, 10.0, -11.0).is_err());
    }
}
