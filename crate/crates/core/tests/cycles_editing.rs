mod common;

use common::{cond, scarf_world};
use dualcycle_core::cycles::{be_cycle, sc_cycle, CycleParams};
use dualcycle_core::editing::{blend, masked_edit, BlendMode, EditRequest};
use dualcycle_core::maskgen::EditMask;
use dualcycle_core::rng::seeded;
use dualcycle_core::world::{region_mask, render_scene, AnalyticDenoiser, MixtureWorld, Region, SceneSpec, DEFAULT_SHAPE};
use dualcycle_core::{Condition, ImageTensor, NoiseSchedule, Sampler};
use proptest::prelude::*;

const NOISE_STEPS: [usize; 6] = [85, 80, 75, 70, 60, 50];
const SOURCE: &str = "color=gray,accessory=none,ears=pointed";

fn source() -> ImageTensor {
    render_scene(&SceneSpec::new(cond(SOURCE), DEFAULT_SHAPE)).unwrap()
}

fn region_l2(a: &ImageTensor, b: &ImageTensor, region: &[bool]) -> f64 {
    let ch = a.channels();
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .enumerate()
        .filter(|(i, _)| region[i / ch])
        .map(|(_, (x, y))| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

struct Fixture {
    world: MixtureWorld,
    sched: NoiseSchedule,
}

impl Fixture {
    fn new(strength: f64) -> Self {
        Self { world: scarf_world(strength), sched: NoiseSchedule::standard() }
    }

    fn run<T>(&self, f: impl FnOnce(&Sampler<'_, AnalyticDenoiser<'_>>) -> T) -> T {
        let den = AnalyticDenoiser::new(&self.world, &self.sched);
        f(&Sampler::new(&den, &self.sched))
    }
}

fn request(x0: &ImageTensor, c_src: &Condition, c_tgt: &Condition, mask: EditMask, k: usize, ns: usize) -> EditRequest {
    EditRequest {
        x0_src: x0.clone(),
        c_src: c_src.clone(),
        c_tgt: c_tgt.clone(),
        mask,
        k,
        noise_step: ns,
        dec_scale: 3.0,
        blend_mode: BlendMode::Deterministic,
    }
}

#[test]
fn identity_cycles_return_the_source() {
    let fx = Fixture::new(0.95);
    let x0 = source();
    let c = cond("accessory=none");
    fx.run(|s| {
        for (i, &ns) in NOISE_STEPS.iter().enumerate() {
            for scale in [1.0, 5.0] {
                let p = CycleParams::new(scale, ns);
                let sc = sc_cycle(s, &x0, &c, &c, p, &mut seeded(i as u64)).unwrap();
                assert!(sc.x0_target.max_abs_diff(&x0).unwrap() <= 1e-3, "sc ns {ns}");
                let be = be_cycle(s, &x0, &c, &c, p, &mut seeded(i as u64)).unwrap();
                assert!(be.x0_target.max_abs_diff(&x0).unwrap() <= 1e-3, "be ns {ns}");
                assert!(be.x0_inv.max_abs_diff(&x0).unwrap() <= 1e-3, "be inv ns {ns}");
                assert_eq!(be.z_source.steps(), ns);
                assert_eq!(be.z_target.steps(), ns);
            }
        }
    });
}

#[test]
fn be_cycle_forward_path_is_sc_cycle() {
    let fx = Fixture::new(0.95);
    let x0 = source();
    let (c_src, c_tgt) = (cond("accessory=none"), cond("accessory=scarf"));
    fx.run(|s| {
        let p = CycleParams::new(2.0, 70);
        let sc = sc_cycle(s, &x0, &c_src, &c_tgt, p, &mut seeded(4)).unwrap();
        let be = be_cycle(s, &x0, &c_src, &c_tgt, p, &mut seeded(4)).unwrap();
        assert_eq!(sc.x0_target, be.x0_target);
        assert_eq!(sc.z_source, be.z_source);
        assert_eq!(&sc.trajectory, &be.source_trajectory);
    });
}

#[test]
fn full_mask_is_the_plain_edit_bitwise() {
    let fx = Fixture::new(0.95);
    let x0 = source();
    let (c_src, c_tgt) = (cond("accessory=none"), cond("accessory=scarf"));
    fx.run(|s| {
        for (i, &ns) in [85, 60].iter().enumerate() {
            let p = CycleParams { enc_scale: 1.0, dec_scale: 3.0, noise_step: ns };
            let plain = sc_cycle(s, &x0, &c_src, &c_tgt, p, &mut seeded(30 + i as u64)).unwrap();
            for k in NOISE_STEPS.into_iter().filter(|&k| k <= ns) {
                let req = request(&x0, &c_src, &c_tgt, EditMask::filled(16, 16, true), k, ns);
                let out = masked_edit(s, &req, &plain.z_source, &plain.trajectory, &mut seeded(0)).unwrap();
                assert_eq!(out.as_slice(), plain.x0_target.as_slice(), "ns {ns} k {k}");
            }
        }
    });
}

#[test]
fn empty_mask_recovers_the_source() {
    let fx = Fixture::new(0.95);
    let x0 = source();
    let c = cond("accessory=none");
    fx.run(|s| {
        for &ns in &NOISE_STEPS {
            let p = CycleParams::new(3.0, ns);
            let enc = sc_cycle(s, &x0, &c, &c, p, &mut seeded(ns as u64)).unwrap();
            for k in NOISE_STEPS.into_iter().filter(|&k| k <= ns) {
                let req = request(&x0, &c, &c, EditMask::filled(16, 16, false), k, ns);
                let out = masked_edit(s, &req, &enc.z_source, &enc.trajectory, &mut seeded(0)).unwrap();
                assert!(out.max_abs_diff(&x0).unwrap() <= 1e-3, "ns {ns} k {k}");
            }
        }
    });
}

#[test]
fn split_at_the_noise_step_is_the_plain_edit() {
    let fx = Fixture::new(0.95);
    let x0 = source();
    let (c_src, c_tgt) = (cond("accessory=none"), cond("accessory=scarf"));
    let band = EditMask::new(16, 16, region_mask(Region::Accessory, DEFAULT_SHAPE)).unwrap();
    fx.run(|s| {
        let plain = sc_cycle(s, &x0, &c_src, &c_tgt, CycleParams::new(3.0, 70), &mut seeded(8)).unwrap();
        let req = request(&x0, &c_src, &c_tgt, band, 70, 70);
        let out = masked_edit(s, &req, &plain.z_source, &plain.trajectory, &mut seeded(0)).unwrap();
        assert_eq!(out, plain.x0_target);
    });
}

/// The ground-truth accessory mask keeps the ears of a biased edit: the
/// result is closer to the source on the ears than the plain edit while the
/// band moves toward the scarf template.
#[test]
fn band_mask_protects_the_ears() {
    let fx = Fixture::new(0.95);
    let x0 = source();
    let template = render_scene(&SceneSpec::new(cond(SOURCE).with("accessory", "scarf"), DEFAULT_SHAPE)).unwrap();
    let (c_src, c_tgt) = (cond("accessory=none"), cond("accessory=scarf"));
    let band_cells = region_mask(Region::Accessory, DEFAULT_SHAPE);
    let ears = region_mask(Region::Ears, DEFAULT_SHAPE);
    let band = EditMask::new(16, 16, band_cells.clone()).unwrap();
    let seeds = 15;
    fx.run(|s| {
        let mut wins = 0;
        for seed in 0..seeds {
            let plain = sc_cycle(s, &x0, &c_src, &c_tgt, CycleParams::new(3.0, 85), &mut seeded(seed)).unwrap();
            let req = request(&x0, &c_src, &c_tgt, band.clone(), 60, 85);
            let out = masked_edit(s, &req, &plain.z_source, &plain.trajectory, &mut seeded(seed)).unwrap();
            let toward = region_l2(&out, &template, &band_cells) < region_l2(&x0, &template, &band_cells);
            if toward && region_l2(&out, &x0, &ears) < region_l2(&plain.x0_target, &x0, &ears) {
                wins += 1;
            }
        }
        assert!(wins as f64 >= 0.8 * seeds as f64, "{wins}/{seeds}");
    });
}

#[test]
fn unmasked_pixels_drift_less_than_under_plain_editing() {
    let fx = Fixture::new(0.95);
    let x0 = source();
    let (c_src, c_tgt) = (cond("accessory=none"), cond("accessory=scarf"));
    let band_cells = region_mask(Region::Accessory, DEFAULT_SHAPE);
    let outside: Vec<bool> = band_cells.iter().map(|b| !b).collect();
    let band = EditMask::new(16, 16, band_cells).unwrap();
    fx.run(|s| {
        for &ns in &[85, 70] {
            for k in NOISE_STEPS.into_iter().filter(|&k| k < ns) {
                let (mut masked, mut plain_sum) = (0.0, 0.0);
                for seed in 0..15 {
                    let plain = sc_cycle(s, &x0, &c_src, &c_tgt, CycleParams::new(3.0, ns), &mut seeded(seed)).unwrap();
                    let req = request(&x0, &c_src, &c_tgt, band.clone(), k, ns);
                    let out = masked_edit(s, &req, &plain.z_source, &plain.trajectory, &mut seeded(seed)).unwrap();
                    masked += region_l2(&out, &x0, &outside);
                    plain_sum += region_l2(&plain.x0_target, &x0, &outside);
                }
                assert!(masked < plain_sum, "ns {ns} k {k}: {masked} vs {plain_sum}");
            }
        }
    });
}

#[test]
fn stochastic_blend_draws_a_fresh_source_state() {
    let fx = Fixture::new(0.95);
    let x0 = source();
    let c = cond("accessory=none");
    fx.run(|s| {
        let enc = sc_cycle(s, &x0, &c, &c, CycleParams::new(1.0, 70), &mut seeded(2)).unwrap();
        let mut req = request(&x0, &c, &c, EditMask::filled(16, 16, false), 50, 70);
        req.blend_mode = BlendMode::Stochastic;
        let a = masked_edit(s, &req, &enc.z_source, &enc.trajectory, &mut seeded(10)).unwrap();
        let b = masked_edit(s, &req, &enc.z_source, &enc.trajectory, &mut seeded(10)).unwrap();
        let c2 = masked_edit(s, &req, &enc.z_source, &enc.trajectory, &mut seeded(11)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c2);
        assert!(a.is_finite());
    });
}

#[test]
fn edit_request_is_validated() {
    let fx = Fixture::new(0.95);
    let x0 = source();
    let c = cond("accessory=none");
    fx.run(|s| {
        let enc = sc_cycle(s, &x0, &c, &c, CycleParams::new(1.0, 60), &mut seeded(2)).unwrap();
        let mask = EditMask::filled(16, 16, true);
        for (k, ns) in [(0, 60), (61, 60), (50, 70)] {
            let req = request(&x0, &c, &c, mask.clone(), k, ns);
            assert!(masked_edit(s, &req, &enc.z_source, &enc.trajectory, &mut seeded(0)).is_err(), "k {k} ns {ns}");
        }
        let req = request(&x0, &c, &c, EditMask::filled(8, 8, true), 50, 60);
        assert!(masked_edit(s, &req, &enc.z_source, &enc.trajectory, &mut seeded(0)).is_err());
    });
}

proptest! {
    #[test]
    fn blend_picks_each_pixel_from_one_side(cells in prop::collection::vec(any::<bool>(), 12), seed in any::<u64>()) {
        let shape = dualcycle_core::Shape::new(3, 4, 2);
        let t = common::random_image(shape, seed);
        let src = common::random_image(shape, seed ^ 1);
        let mask = EditMask::new(3, 4, cells.clone()).unwrap();
        let out = blend(&t, &src, &mask).unwrap();
        for (i, v) in out.as_slice().iter().enumerate() {
            let want = if cells[i / 2] { t.as_slice()[i] } else { src.as_slice()[i] };
            prop_assert_eq!(v.to_bits(), want.to_bits());
        }
        prop_assert_eq!(blend(&t, &src, &EditMask::filled(3, 4, true)).unwrap(), t.clone());
        prop_assert_eq!(blend(&t, &src, &EditMask::filled(3, 4, false)).unwrap(), src);
    }
}
