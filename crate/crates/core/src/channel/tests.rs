use super::*;
use crate::metrics::{affine_decisions, ber_count};
use crate::txrx::{generate_rns_pam4, Waveform};
use alloc::vec;

fn clean_link() -> LinkConfig {
    let mut cfg = LinkConfig { fiber_km: 0.0, extinction_ratio_db: f64::INFINITY, ..Default::default() };
    cfg.soa.enabled = false;
    cfg.receiver.thermal_noise = false;
    cfg
}

fn unequalized_ber(cfg: &LinkConfig, n: usize, seed: u64) -> f64 {
    let sym = generate_rns_pam4(seed, n).unwrap();
    let out = run_link(&sym, cfg).unwrap();
    let est = affine_decisions(&out.one_sps.samples, &sym);
    ber_count(&est, &sym, 16).unwrap().ber
}

/// Composite Simpson rule over `[a, b]` with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn thermal_noise_variance_matches_filtered_psd() {
    let rx = ReceiverParams::default();
    let fs = 224e9;
    let n = 1 << 20;
    let dark = Waveform { samples: vec![Complex64::new(0.0, 0.0); n], sample_rate: fs, sps: 4 };
    let out = detect(&dark, &rx, 1540.0, 7);
    let mean = out.samples.iter().sum::<f64>() / n as f64;
    let var = out.samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let bessel = BesselFilter::new(rx.bandwidth_hz);
    let expected = rx.thermal_psd() * simpson(|f| bessel.response(f).norm_sqr(), 0.0, fs / 2.0, 20_000);
    assert!((var / expected - 1.0).abs() < 0.05, "{var:e} vs {expected:e}");
}

#[test]
fn distortion_free_link_is_error_free() {
    let cfg = clean_link();
    let sym = generate_rns_pam4(3, 1 << 14).unwrap();
    let out = run_link(&sym, &cfg).unwrap();
    assert_eq!(out.one_sps.len(), sym.len());
    assert_eq!(out.two_sps.len(), 2 * sym.len());
    let est = affine_decisions(&out.one_sps.samples, &sym);
    assert_eq!(ber_count(&est, &sym, 0).unwrap().bit_errors, 0);
    // the odd 2 SpS samples sit between symbols, the even ones on them
    let even: Vec<f64> = out.two_sps.samples.iter().step_by(2).copied().collect();
    assert_eq!(even, out.one_sps.samples);
}

#[test]
fn ber_falls_with_received_power() {
    let mut cfg = clean_link();
    cfg.receiver.thermal_noise = true;
    let mut last = f64::INFINITY;
    for rop in [-14.0, -12.0, -10.0, -8.0, -6.0, -4.0] {
        cfg.rop_dbm = rop;
        let ber = unequalized_ber(&cfg, 1 << 13, 11);
        assert!(ber <= last, "BER {ber} at {rop} dBm above {last}");
        last = ber;
    }
    let mut low = cfg.clone();
    low.rop_dbm = -14.0;
    assert!(unequalized_ber(&low, 1 << 13, 11) > 1e-3);
}

#[test]
fn saturated_soa_squeezes_the_top_level() {
    let mut cfg = clean_link();
    cfg.soa.enabled = true;
    cfg.soa.ase = false;
    cfg.rop_dbm = -4.0;
    let sym = generate_rns_pam4(21, 1 << 13).unwrap();
    let out = run_link(&sym, &cfg).unwrap();
    let spread = |level: i8| {
        let v: Vec<f64> =
            out.one_sps.samples.iter().zip(sym.levels()).filter(|(_, &l)| l == level).map(|(x, _)| *x).collect();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, libm::sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64))
    };
    let (m_lo, s_lo) = spread(-3);
    let (m_hi, s_hi) = spread(3);
    assert!(m_hi > m_lo);
    assert!(s_hi > 1.5 * s_lo, "top spread {s_hi:e}, bottom spread {s_lo:e}");
    cfg.soa.saturation = false;
    let linear = run_link(&sym, &cfg).unwrap();
    let err = linear.one_sps.samples.iter().zip(&out.one_sps.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err > 0.0);
}

#[test]
fn link_is_deterministic_in_its_seed() {
    let cfg = LinkConfig::default();
    let sym = generate_rns_pam4(2, 2048).unwrap();
    let a = run_link(&sym, &cfg).unwrap();
    let b = run_link(&sym, &cfg).unwrap();
    assert_eq!(a, b);
    let other = LinkConfig { seed: 2, ..cfg };
    assert_ne!(run_link(&sym, &other).unwrap(), a);
}

#[test]
fn invalid_operating_points_are_rejected() {
    let sym = generate_rns_pam4(2, 256).unwrap();
    let hot = LinkConfig { rop_dbm: 5.0, ..Default::default() };
    assert!(matches!(run_link(&sym, &hot), Err(crate::Error::InvalidConfig(_))));
    let er = LinkConfig { extinction_ratio_db: 0.0, ..Default::default() };
    assert!(run_link(&sym, &er).is_err());
    let sps = LinkConfig { sim_sps: 3, ..Default::default() };
    assert!(run_link(&sym, &sps).is_err());
}

#[test]
fn default_link_is_hard_but_not_hopeless_unequalized() {
    let ber = unequalized_ber(&LinkConfig::default(), 1 << 14, 5);
    assert!((1e-2..1e-1).contains(&ber), "unequalized BER {ber}");
}
