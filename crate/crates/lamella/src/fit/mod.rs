//! Dense-grid fitting against multi-view, multi-level supervision renders.
//!
//! Three stages: A fits the full-level render volumetrically, B adds the
//! outside-in masked levels, C converts the geometry channel to a signed
//! distance and fine-tunes through extracted-mesh rasterization with frozen
//! connectivity. Plain gradient descent with per-stage constant step and
//! halving backoff on any loss increase; the recorded history is
//! non-increasing by construction.

pub mod backward;
pub mod grid;
pub mod loss;
mod stage_c;

use rayon::prelude::*;

use crate::camera::OrthoCamera;
use crate::error::{Error, Result};
use crate::field::FieldMode;
use crate::render::{render_view, RenderOptions, RenderTarget};
use crate::scene::AnalyticScene;
use crate::semantic::SemanticSet;

use backward::{backward_level, build_rays, forward_level, ChunkPool, LevelOutputs, PixelGrads, RaySet};
pub use grid::DenseGrid;
pub use loss::{
    semantic_ce_loss, stage1_loss, stage1_loss_views, stage3_loss, LevelId, LossWeights,
    SupervisionLevel, TargetAux,
};
pub use stage_c::stage_c_loss_parts;

use loss::{ImageTerms, FOREGROUND_THRESHOLD, LOG_EPS};

/// Fitting schedule and discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub grid_dims: [usize; 3],
    pub semantic_count: usize,
    /// Supervision render resolution (pixels per side).
    pub resolution: u32,
    /// Ray samples per pixel during fitting.
    pub n_samples: usize,
    /// Ray samples per pixel for the ground-truth target renders.
    pub target_samples: usize,
    pub iters_stage_a: usize,
    pub iters_stage_b: usize,
    pub iters_stage_c: usize,
    pub step_a: f64,
    pub step_b: f64,
    pub step_c: f64,
    /// Density profile width (shared with the scene oracle).
    pub beta: f64,
    /// Convert the geometry channel to a signed distance after stage B.
    pub convert_to_sdf: bool,
    /// Extraction lattice used by the mesh fine-tuning stage.
    pub stage_c_dims: [usize; 3],
    pub stage_c_extents: [f64; 3],
    pub weights: LossWeights,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            grid_dims: [64, 64, 64],
            semantic_count: 3,
            resolution: 64,
            n_samples: 80,
            target_samples: 160,
            iters_stage_a: 400,
            iters_stage_b: 500,
            iters_stage_c: 40,
            step_a: 2e4,
            step_b: 2e4,
            step_c: 2e-2,
            beta: crate::scene::DEFAULT_BETA,
            convert_to_sdf: true,
            stage_c_dims: [48, 48, 72],
            stage_c_extents: [0.7, 0.7, 1.05],
            weights: LossWeights::default(),
        }
    }
}

/// One accepted optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitRecord {
    pub stage: char,
    pub iteration: usize,
    pub loss: f64,
    pub step: f64,
}

/// Fitted grid plus the full loss history.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub grid: DenseGrid,
    pub history: Vec<FitRecord>,
}

/// Renders the three supervision levels of a scene from the given cameras.
pub fn render_supervision_levels(
    scene: &AnalyticScene,
    cameras: &[OrthoCamera],
    n_samples: usize,
) -> Result<Vec<SupervisionLevel>> {
    let field = scene.field(FieldMode::Sdf);
    let opts = RenderOptions {
        n_samples,
        beta: scene.beta,
    };
    LevelId::ALL
        .iter()
        .map(|&id| {
            let kept = id.kept(scene.semantic_count);
            let targets = cameras
                .iter()
                .map(|cam| render_view(&field, cam, Some(kept), &opts))
                .collect::<Result<Vec<_>>>()?;
            Ok(SupervisionLevel { id, kept, targets })
        })
        .collect()
}

/// First-stage objective with analytic gradients: unmasked full-level loss
/// of the grid rendered from `cameras` against the full-level targets.
pub fn stage1_loss_grid(
    grid: &DenseGrid,
    cameras: &[OrthoCamera],
    targets: &[RenderTarget],
    weights: &LossWeights,
    n_samples: usize,
) -> Result<(f64, Vec<f64>)> {
    let rays = build_rays(cameras);
    let auxes: Vec<TargetAux> = targets.iter().map(TargetAux::from_target).collect();
    let outputs = forward_level(grid, &rays, None, n_samples);
    let (terms, grads) = level_terms_and_grads(&outputs, targets, &auxes, weights, false);
    let mut grad = vec![0.0; grid.parameter_count()];
    let mut pool = ChunkPool::new();
    backward_level(grid, &rays, None, n_samples, &grads, &mut grad, &mut pool);
    Ok((terms.combined(weights), grad))
}

/// Hierarchical objective with analytic gradients: the sum over supervision
/// levels of the masked filtered-render loss.
pub fn stage2_loss_grid(
    grid: &DenseGrid,
    cameras: &[OrthoCamera],
    levels: &[SupervisionLevel],
    weights: &LossWeights,
    n_samples: usize,
) -> Result<(f64, Vec<f64>)> {
    let rays = build_rays(cameras);
    let mut grad = vec![0.0; grid.parameter_count()];
    let mut pool = ChunkPool::new();
    let mut total = 0.0;
    for level in levels {
        let auxes: Vec<TargetAux> = level.targets.iter().map(TargetAux::from_target).collect();
        let outputs = forward_level(grid, &rays, Some(level.kept), n_samples);
        let (terms, grads) =
            level_terms_and_grads(&outputs, &level.targets, &auxes, weights, true);
        total += terms.combined(weights);
        backward_level(
            grid,
            &rays,
            Some(level.kept),
            n_samples,
            &grads,
            &mut grad,
            &mut pool,
        );
    }
    Ok((total, grad))
}

/// Value-only hierarchical loss (the sum over levels), rendering the grid.
pub fn stage2_loss(
    grid: &DenseGrid,
    cameras: &[OrthoCamera],
    levels: &[SupervisionLevel],
    weights: &LossWeights,
    n_samples: usize,
) -> Result<f64> {
    let rays = build_rays(cameras);
    let mut total = 0.0;
    for level in levels {
        let auxes: Vec<TargetAux> = level.targets.iter().map(TargetAux::from_target).collect();
        let outputs = forward_level(grid, &rays, Some(level.kept), n_samples);
        let (terms, _) = level_terms_only(&outputs, &level.targets, &auxes, weights, true);
        total += terms.combined(weights);
    }
    Ok(total)
}

/// Fits a dense grid to the scene with the staged schedule. The returned
/// history is non-increasing within each stage.
pub fn fit_grid(
    scene: &AnalyticScene,
    cameras: &[OrthoCamera],
    config: &FitConfig,
) -> Result<FitOutcome> {
    scene.validate()?;
    if cameras.is_empty() {
        return Err(Error::domain("fitting needs at least one camera"));
    }
    for cam in cameras {
        cam.validate()?;
        if cam.resolution != config.resolution {
            return Err(Error::Config(format!(
                "camera resolution {} differs from fit resolution {}",
                cam.resolution, config.resolution
            )));
        }
    }
    let mut grid = DenseGrid::new(config.grid_dims, config.semantic_count)?;
    let total_iters = config.iters_stage_a + config.iters_stage_b + config.iters_stage_c;
    let mut history = Vec::new();
    if total_iters == 0 {
        return Ok(FitOutcome { grid, history });
    }

    let levels = render_supervision_levels(scene, cameras, config.target_samples)?;
    let rays = build_rays(cameras);
    let full_level = levels
        .iter()
        .find(|l| l.id == LevelId::Full)
        .expect("full level rendered");
    let inner_levels: Vec<&SupervisionLevel> = levels
        .iter()
        .filter(|l| l.id != LevelId::Full)
        .collect();

    // Stage A: unmasked full-level volume fitting.
    {
        let mut objective = VolumeObjective {
            rays: &rays,
            n_samples: config.n_samples,
            weights: &config.weights,
            terms: vec![LevelTerm {
                kept: None,
                targets: &full_level.targets,
                auxes: full_level.targets.iter().map(TargetAux::from_target).collect(),
                masked_rgb: false,
            }],
            pool: ChunkPool::new(),
            cache: None,
        };
        run_stage(&mut grid, &mut objective, config.iters_stage_a, config.step_a, 'A', &mut history)?;
    }

    // Stage B: add the masked hierarchical levels. The filtered full level's
    // kept-mass is identically one (softmax sums to one), so the unmasked
    // full term stands in for it with the same gradients.
    {
        let mut terms = vec![LevelTerm {
            kept: None,
            targets: &full_level.targets,
            auxes: full_level.targets.iter().map(TargetAux::from_target).collect(),
            masked_rgb: false,
        }];
        terms.push(LevelTerm {
            kept: Some(full_level.kept),
            targets: &full_level.targets,
            auxes: full_level.targets.iter().map(TargetAux::from_target).collect(),
            masked_rgb: true,
        });
        for level in &inner_levels {
            terms.push(LevelTerm {
                kept: Some(level.kept),
                targets: &level.targets,
                auxes: level.targets.iter().map(TargetAux::from_target).collect(),
                masked_rgb: true,
            });
        }
        let mut objective = VolumeObjective {
            rays: &rays,
            n_samples: config.n_samples,
            weights: &config.weights,
            terms,
            pool: ChunkPool::new(),
            cache: None,
        };
        run_stage(&mut grid, &mut objective, config.iters_stage_b, config.step_b, 'B', &mut history)?;
    }

    // Stage C: switch to a signed-distance geometry channel and fine-tune
    // through extracted meshes with frozen connectivity.
    if config.convert_to_sdf {
        grid.convert_to_sdf(config.beta)?;
        if config.iters_stage_c > 0 {
            let mut objective = stage_c::StageCObjective::prepare(&grid, cameras, &levels, config)?;
            run_stage(&mut grid, &mut objective, config.iters_stage_c, config.step_c, 'C', &mut history)?;
        }
    }

    Ok(FitOutcome { grid, history })
}

/// A differentiable objective over grid parameters.
pub(crate) trait Objective {
    /// Loss value at the given grid; may cache forward results.
    fn eval(&mut self, grid: &DenseGrid) -> Result<f64>;
    /// Gradient at the grid last passed to `eval`.
    fn grad(&mut self, grid: &DenseGrid) -> Result<Vec<f64>>;
}

const MAX_BACKOFF: usize = 40;
const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_WINDOW: usize = 100;

pub(crate) fn run_stage(
    grid: &mut DenseGrid,
    objective: &mut dyn Objective,
    iterations: usize,
    step0: f64,
    stage: char,
    history: &mut Vec<FitRecord>,
) -> Result<()> {
    if iterations == 0 {
        return Ok(());
    }
    let mut step = step0;
    let mut loss = objective.eval(grid)?;
    if !loss.is_finite() {
        return Err(Error::domain(format!("non-finite initial loss in stage {stage}")));
    }
    let initial = loss;
    let mut over_budget = 0usize;
    history.push(FitRecord {
        stage,
        iteration: 0,
        loss,
        step,
    });
    for iter in 1..=iterations {
        let grad = objective.grad(grid)?;
        let mut accepted = false;
        for _ in 0..MAX_BACKOFF {
            let mut candidate = grid.clone();
            candidate
                .raw_data_mut()
                .par_iter_mut()
                .zip(&grad)
                .for_each(|(p, g)| *p -= step * g);
            let candidate_loss = objective.eval(&candidate)?;
            if candidate_loss <= loss {
                *grid = candidate;
                loss = candidate_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Gradient step cannot decrease the loss at any surviving step
            // size; re-evaluate the incumbent so cached state matches it.
            let _ = objective.eval(grid)?;
        }
        history.push(FitRecord {
            stage,
            iteration: iter,
            loss,
            step,
        });
        if loss > DIVERGENCE_FACTOR * initial {
            over_budget += 1;
            if over_budget >= DIVERGENCE_WINDOW {
                return Err(Error::Diverged {
                    iteration: iter,
                    loss,
                    initial,
                    history: history.iter().map(|r| r.loss).collect(),
                });
            }
        } else {
            over_budget = 0;
        }
    }
    Ok(())
}

/// One level term of the volumetric objective.
struct LevelTerm<'a> {
    kept: Option<SemanticSet>,
    targets: &'a [RenderTarget],
    auxes: Vec<TargetAux>,
    masked_rgb: bool,
}

struct VolumeObjective<'a> {
    rays: &'a RaySet,
    n_samples: usize,
    weights: &'a LossWeights,
    terms: Vec<LevelTerm<'a>>,
    pool: ChunkPool,
    cache: Option<VolumeCache>,
}

struct VolumeCache {
    outputs: Vec<LevelOutputs>,
    terms: Vec<ImageTerms>,
}

impl VolumeObjective<'_> {
    fn forward(&self, grid: &DenseGrid) -> (f64, VolumeCache) {
        let mut outputs = Vec::with_capacity(self.terms.len());
        let mut terms_out = Vec::with_capacity(self.terms.len());
        let mut total = 0.0;
        for term in &self.terms {
            let out = forward_level(grid, self.rays, term.kept, self.n_samples);
            let (t, _) = level_terms_only(&out, term.targets, &term.auxes, self.weights, term.masked_rgb);
            total += t.combined(self.weights);
            outputs.push(out);
            terms_out.push(t);
        }
        (total, VolumeCache { outputs, terms: terms_out })
    }
}

impl Objective for VolumeObjective<'_> {
    fn eval(&mut self, grid: &DenseGrid) -> Result<f64> {
        let (loss, cache) = self.forward(grid);
        self.cache = Some(cache);
        Ok(loss)
    }

    fn grad(&mut self, grid: &DenseGrid) -> Result<Vec<f64>> {
        let cache = match &self.cache {
            Some(c) => c,
            None => {
                let (_, c) = self.forward(grid);
                self.cache = Some(c);
                self.cache.as_ref().unwrap()
            }
        };
        let mut grad = vec![0.0; grid.parameter_count()];
        for (i, term) in self.terms.iter().enumerate() {
            let grads = pixel_grads_from_terms(
                &cache.outputs[i],
                term.targets,
                &term.auxes,
                &cache.terms[i],
                self.weights,
                term.masked_rgb,
            );
            backward_level(
                grid,
                self.rays,
                term.kept,
                self.n_samples,
                &grads,
                &mut grad,
                &mut self.pool,
            );
        }
        Ok(grad)
    }
}

/// Pooled image terms of a level render against its targets.
fn level_terms_only(
    outputs: &LevelOutputs,
    targets: &[RenderTarget],
    auxes: &[TargetAux],
    weights: &LossWeights,
    masked_rgb: bool,
) -> (ImageTerms, ()) {
    let n = outputs.res * outputs.res;
    let k = outputs.k;
    let mut acc = ImageTerms::default();
    for (v, (target, aux)) in targets.iter().zip(auxes).enumerate() {
        for p in 0..n {
            let ri = v * n + p;
            let fg = aux.foreground[p];
            if !masked_rgb || fg {
                for ch in 0..3 {
                    let d = outputs.rgb[ri][ch] - target.rgb[p][ch];
                    acc.rgb_sq += d * d;
                }
                acc.rgb_denom += 3.0;
            }
            let da = outputs.alpha[ri] - target.alpha[p];
            acc.mask_sq += da * da;
            acc.mask_denom += 1.0;
            if fg {
                let class = aux.class[p] as usize;
                let p_hat = outputs.sem[ri * k + class].clamp(LOG_EPS, 1.0);
                acc.ce += -weights.class_weight(class) * p_hat.ln();
                acc.ce_denom += 1.0;
            }
        }
    }
    (acc, ())
}

fn level_terms_and_grads(
    outputs: &LevelOutputs,
    targets: &[RenderTarget],
    auxes: &[TargetAux],
    weights: &LossWeights,
    masked_rgb: bool,
) -> (ImageTerms, PixelGrads) {
    let (terms, _) = level_terms_only(outputs, targets, auxes, weights, masked_rgb);
    let grads = pixel_grads_from_terms(outputs, targets, auxes, &terms, weights, masked_rgb);
    (terms, grads)
}

fn pixel_grads_from_terms(
    outputs: &LevelOutputs,
    targets: &[RenderTarget],
    auxes: &[TargetAux],
    terms: &ImageTerms,
    weights: &LossWeights,
    masked_rgb: bool,
) -> PixelGrads {
    let n = outputs.res * outputs.res;
    let k = outputs.k;
    let mut grads = PixelGrads::zeros(outputs.rgb.len(), k);
    for (v, (target, aux)) in targets.iter().zip(auxes).enumerate() {
        for p in 0..n {
            let ri = v * n + p;
            let fg = aux.foreground[p];
            if (!masked_rgb || fg) && terms.rgb_denom > 0.0 {
                for ch in 0..3 {
                    let d = outputs.rgb[ri][ch] - target.rgb[p][ch];
                    grads.rgb[ri][ch] = 2.0 * d / terms.rgb_denom;
                }
            }
            if terms.mask_denom > 0.0 {
                grads.alpha[ri] =
                    weights.lambda_mask * 2.0 * (outputs.alpha[ri] - target.alpha[p]) / terms.mask_denom;
            }
            if fg && terms.ce_denom > 0.0 {
                let class = aux.class[p] as usize;
                let raw = outputs.sem[ri * k + class];
                if raw > LOG_EPS && raw < 1.0 {
                    grads.sem[ri * k + class] =
                        -weights.lambda_sem * weights.class_weight(class) / (raw * terms.ce_denom);
                }
            }
        }
    }
    grads
}

/// Foreground convention shared with the loss side.
pub fn foreground(alpha: f64) -> bool {
    alpha > FOREGROUND_THRESHOLD
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::default_camera_rig;
    use crate::field::FieldSampler;
    use crate::scene::make_test_character;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded_grid(dims: [usize; 3], seed: u64) -> DenseGrid {
        let mut grid = DenseGrid::new(dims, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in grid.raw_data_mut() {
            *v = rng.gen::<f64>() * 2.0 - 1.0;
        }
        grid
    }

    fn small_cameras() -> Vec<OrthoCamera> {
        vec![
            OrthoCamera::new(0.0, 0.0, 1.2, 16),
            OrthoCamera::new(90.0, 0.0, 1.2, 16),
        ]
    }

    #[test]
    fn stage1_gradient_matches_finite_differences() {
        let scene = make_test_character(42, "basic").unwrap();
        let cameras = small_cameras();
        let levels = render_supervision_levels(&scene, &cameras, 48).unwrap();
        let full = &levels.iter().find(|l| l.id == LevelId::Full).unwrap().targets;
        let grid = seeded_grid([10, 10, 10], 3);
        let w = LossWeights::default();
        let n_samples = 24;
        let (_, grad) = stage1_loss_grid(&grid, &cameras, full, &w, n_samples).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        for _ in 0..80 {
            let i = rng.gen_range(0..grid.parameter_count());
            if grad[i].abs() <= 1e-6 {
                continue;
            }
            let h = 1e-4;
            let mut plus = grid.clone();
            plus.raw_data_mut()[i] += h;
            let mut minus = grid.clone();
            minus.raw_data_mut()[i] -= h;
            let lp = stage1_loss_grid(&plus, &cameras, full, &w, n_samples).unwrap().0;
            let lm = stage1_loss_grid(&minus, &cameras, full, &w, n_samples).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / grad[i].abs().max(fd.abs());
            assert!(rel <= 1e-3, "param {i}: fd {fd} vs {}, rel {rel}", grad[i]);
            checked += 1;
        }
        assert!(checked >= 30, "only {checked} parameters exercised");
    }

    #[test]
    fn stage2_gradient_matches_finite_differences() {
        let scene = make_test_character(42, "basic").unwrap();
        let cameras = small_cameras();
        let levels = render_supervision_levels(&scene, &cameras, 48).unwrap();
        let grid = seeded_grid([10, 10, 10], 5);
        let w = LossWeights::default();
        let n_samples = 24;
        let (_, grad) = stage2_loss_grid(&grid, &cameras, &levels, &w, n_samples).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut checked = 0;
        for _ in 0..80 {
            let i = rng.gen_range(0..grid.parameter_count());
            if grad[i].abs() <= 1e-6 {
                continue;
            }
            let h = 1e-4;
            let mut plus = grid.clone();
            plus.raw_data_mut()[i] += h;
            let mut minus = grid.clone();
            minus.raw_data_mut()[i] -= h;
            let lp = stage2_loss(&plus, &cameras, &levels, &w, n_samples).unwrap();
            let lm = stage2_loss(&minus, &cameras, &levels, &w, n_samples).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / grad[i].abs().max(fd.abs());
            assert!(rel <= 1e-3, "param {i}: fd {fd} vs {}, rel {rel}", grad[i]);
            checked += 1;
        }
        assert!(checked >= 30, "only {checked} parameters exercised");
    }

    #[test]
    fn stage2_is_additive_over_levels() {
        let scene = make_test_character(11, "skirted").unwrap();
        let cameras = small_cameras();
        let levels = render_supervision_levels(&scene, &cameras, 48).unwrap();
        let grid = seeded_grid([8, 8, 8], 7);
        let w = LossWeights::default();
        let total = stage2_loss(&grid, &cameras, &levels, &w, 16).unwrap();
        let mut sum = 0.0;
        for level in &levels {
            sum += stage2_loss(&grid, &cameras, std::slice::from_ref(level), &w, 16).unwrap();
        }
        assert!((total - sum).abs() < 1e-12, "{total} vs {sum}");
    }

    #[test]
    fn gradients_are_identical_across_thread_counts() {
        let scene = make_test_character(42, "basic").unwrap();
        let cameras = small_cameras();
        let levels = render_supervision_levels(&scene, &cameras, 32).unwrap();
        let full = levels.iter().find(|l| l.id == LevelId::Full).unwrap();
        let grid = seeded_grid([8, 8, 8], 3);
        let w = LossWeights::default();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| stage1_loss_grid(&grid, &cameras, &full.targets, &w, 16).unwrap())
        };
        let (l1, g1) = run(1);
        let (l8, g8) = run(8);
        assert_eq!(l1.to_bits(), l8.to_bits());
        assert_eq!(g1.len(), g8.len());
        for (a, b) in g1.iter().zip(&g8) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_iterations_returns_initial_grid() {
        let scene = make_test_character(42, "basic").unwrap();
        let cameras = default_camera_rig(16);
        let config = FitConfig {
            resolution: 16,
            iters_stage_a: 0,
            iters_stage_b: 0,
            iters_stage_c: 0,
            grid_dims: [8, 8, 8],
            ..FitConfig::default()
        };
        let outcome = fit_grid(&scene, &cameras, &config).unwrap();
        assert_eq!(outcome.grid, DenseGrid::new([8, 8, 8], 3).unwrap());
        assert!(outcome.history.is_empty());
        assert_eq!(outcome.grid.mode(), crate::field::FieldMode::Density);
    }

    #[test]
    fn small_fit_descends_and_converts() {
        let scene = make_test_character(42, "basic").unwrap();
        let cameras = default_camera_rig(24);
        let config = FitConfig {
            resolution: 24,
            grid_dims: [16, 16, 16],
            n_samples: 32,
            target_samples: 64,
            iters_stage_a: 25,
            iters_stage_b: 10,
            iters_stage_c: 3,
            stage_c_dims: [12, 12, 18],
            ..FitConfig::default()
        };
        let outcome = fit_grid(&scene, &cameras, &config).unwrap();
        assert_eq!(outcome.grid.mode(), crate::field::FieldMode::Sdf);
        // History is non-increasing within each stage.
        for stage in ['A', 'B', 'C'] {
            let losses: Vec<f64> = outcome
                .history
                .iter()
                .filter(|r| r.stage == stage)
                .map(|r| r.loss)
                .collect();
            assert!(!losses.is_empty(), "stage {stage} missing from history");
            for pair in losses.windows(2) {
                assert!(pair[1] <= pair[0], "stage {stage} increased: {pair:?}");
            }
        }
        let a: Vec<f64> = outcome.history.iter().filter(|r| r.stage == 'A').map(|r| r.loss).collect();
        assert!(
            a.last().unwrap() < &(a[0] * 0.8),
            "stage A barely improved: {} -> {}",
            a[0],
            a.last().unwrap()
        );
    }
}
