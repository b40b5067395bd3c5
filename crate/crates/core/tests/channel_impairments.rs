use ponlab_core::channel::{run_link, LinkConfig};
use ponlab_core::metrics::{affine_decisions, ber_count};
use ponlab_core::txrx::generate_rns_pam4;

fn errors(cfg: &LinkConfig) -> u64 {
    let sym = generate_rns_pam4(21, 1 << 14).unwrap();
    let out = run_link(&sym, cfg).unwrap();
    let est = affine_decisions(&out.one_sps.samples, &sym);
    ber_count(&est, &sym, 16).unwrap().bit_errors
}

fn base() -> LinkConfig {
    LinkConfig { rop_dbm: -10.0, ..Default::default() }
}

#[test]
fn switching_off_an_impairment_never_adds_errors() {
    let reference = errors(&base());
    assert!(reference > 0);
    let variants: [(&str, fn(&mut LinkConfig)); 5] = [
        ("no ASE", |c| c.soa.ase = false),
        ("no thermal noise", |c| c.receiver.thermal_noise = false),
        ("no gain saturation", |c| c.soa.saturation = false),
        ("no fiber", |c| c.fiber_km = 0.0),
        ("wider extinction", |c| c.extinction_ratio_db = 12.0),
    ];
    for (name, tweak) in variants {
        let mut cfg = base();
        tweak(&mut cfg);
        let e = errors(&cfg);
        assert!(e <= reference, "{name}: {e} errors vs {reference}");
    }
}

#[test]
fn removing_both_noise_sources_leaves_no_errors_at_moderate_power() {
    let mut cfg = base();
    cfg.soa.ase = false;
    cfg.receiver.thermal_noise = false;
    assert_eq!(errors(&cfg), 0);
}
