//! Cross-module checks: surface, collar, certificates and the flow box.

use nalgebra::Vector2;
use phforge_core::collar::{default_collar_grid, CollarParams, CollarSystem, TwistFunction, TwistMode};
use phforge_core::conecert::{certify, verdict, CertifyOptions, Cone};
use phforge_core::flowbox::{
    assemble_map, default_flowbox_grid, determinant_deviation, CoverModel, CoverPoint, TiltedSection, ToralAuto,
    TwistPath,
};
use phforge_core::hypgeo::sasaki_distance;
use phforge_core::surface::{FNData, Surface};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn surface_step_inverts() {
    let surface = Surface::build(&FNData::pinched(0.2)).unwrap();
    let twist = surface.twist(TwistFunction::default(), TwistMode::Vp).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = 0;
    for _ in 0..200 {
        let v = surface.sample_tangent(&mut rng);
        let w = surface.step(&v, Some(&twist)).unwrap();
        let back = surface.step_inverse(&w, Some(&twist)).unwrap();
        // points on a domain face may come back as the paired representative
        if sasaki_distance(&v, &back) > 1e-7 {
            bad += 1;
        }
    }
    assert!(bad <= 2, "{bad} of 200 round trips drifted");
}

#[test]
fn pure_flow_certifies_and_twist_is_weaker() {
    let params = CollarParams::new(0.2).unwrap();
    let grid = default_collar_grid(16);
    let cu = Cone::unstable(std::f64::consts::FRAC_PI_4).unwrap();
    let cs = Cone::stable(std::f64::consts::FRAC_PI_4).unwrap();
    let opts = CertifyOptions::default();
    let (u, s) = certify(&CollarSystem::pure_flow(params), &cu, &cs, &grid, &opts).unwrap();
    assert!(verdict(&u, &s));
    let twisted = CollarSystem::new(params, TwistFunction::default(), TwistMode::Dehn);
    let (tu, _) = certify(&twisted, &cu, &cs, &grid, &opts).unwrap();
    assert!(tu.max_exit_angle >= u.max_exit_angle);
}

#[test]
fn flowbox_map_preserves_volume_and_flow_commutes() {
    let model = CoverModel::with_section(ToralAuto::cat_map(), 8.0, 3, TiltedSection::default()).unwrap();
    let sys = assemble_map(&model, &TwistPath::new(1)).unwrap();
    assert!(determinant_deviation(&sys, &default_flowbox_grid(6)).unwrap() < 1e-10);
    let p = CoverPoint {
        copy: 1,
        t: 2.5,
        torus: Vector2::new(0.3, 0.7),
    };
    let a = model.flow(&model.flow(&p, 3.0), 9.0);
    let b = model.flow(&p, 12.0);
    assert_eq!(a.copy, b.copy);
    assert!((a.t - b.t).abs() < 1e-12);
    let d = a.torus - b.torus;
    assert!(d.map(|x| (x - x.round()).abs()).max() < 1e-12);
    let q = model.inverse_time_n_map(&model.time_n_map(&p));
    assert_eq!(q.copy, p.copy);
    assert!((q.torus - p.torus).map(|x| (x - x.round()).abs()).max() < 1e-12);
}
