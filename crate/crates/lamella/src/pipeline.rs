//! End-to-end pipeline: scene generation, supervision targets, grid fitting,
//! layer extraction, staged refinement, color back-projection, and metrics,
//! with every artifact persisted and recorded in a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use glam::DVec3;

use crate::camera::{default_camera_rig, evaluation_rig, OrthoCamera};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::extract::{extract_layer, ExtractionGrid};
use crate::field::{FieldMode, FieldSampler};
use crate::fit::{fit_grid, render_supervision_levels, DenseGrid, LevelId, SupervisionLevel};
use crate::io;
use crate::io::manifest::Manifest;
use crate::mesh::TriMesh;
use crate::metrics::{chamfer, fscore, mask_iou, FSCORE_TAU};
use crate::refine::{
    collision_loss, refine_character, LayeredCharacter, RefineTargets,
};
use crate::render::{rasterize_layers_k, render_view, RasterOptions, RenderOptions, RenderTarget};
use crate::scene::{make_test_character, AnalyticScene};
use crate::semantic::{SemanticId, SemanticSet, SEMANTIC_BODY, SEMANTIC_CLOTH, SEMANTIC_HAIR};
use crate::texture::{backproject_colors, fill_invisible, ProjectionView, ViewWeightTable};

/// Pipeline products kept in memory for the caller.
pub struct PipelineOutcome {
    pub manifest: Manifest,
    pub metrics: Vec<(String, f64)>,
    pub out_dir: PathBuf,
}

/// Runs every stage and writes artifacts under `out_dir`. Any stage error
/// aborts with that stage's name; artifacts written so far stay on disk.
pub fn run_pipeline(
    config: &PipelineConfig,
    out_dir: &Path,
    dump_steps: bool,
) -> Result<PipelineOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let config_hash = config.hash();
    let mut manifest = Manifest::new(config_hash.clone(), config.scene.seed);
    let mut record = |manifest: &mut Manifest, path: &Path| manifest.record(out_dir, path);

    // Stage: scene generation.
    let scene = make_test_character(config.scene.seed, &config.scene.preset)
        .map_err(|e| e.in_stage("scene-gen"))?;
    let scene_path = out_dir.join("scene.toml");
    write_scene(&scene, &scene_path).map_err(|e| e.in_stage("scene-gen"))?;
    record(&mut manifest, &scene_path)?;

    // Stage: supervision targets.
    let fit_cameras = default_camera_rig(config.fit.resolution);
    let levels = render_supervision_levels(&scene, &fit_cameras, config.fit.target_samples)
        .map_err(|e| e.in_stage("render"))?;
    for level in &levels {
        for (view, target) in level.targets.iter().enumerate() {
            let written = write_target_images(
                target,
                &out_dir.join("targets"),
                &format!("{}_{view}", level.id.name()),
            )
            .map_err(|e| e.in_stage("render"))?;
            for path in written {
                record(&mut manifest, &path)?;
            }
        }
    }

    // Stage: grid fitting.
    let outcome = fit_grid(&scene, &fit_cameras, &config.fit_config())
        .map_err(|e| e.in_stage("fit"))?;
    let grid = outcome.grid;
    let grid_path = out_dir.join("grid.sgrd");
    io::write_sgrd(&grid, &grid_path).map_err(|e| e.in_stage("fit"))?;
    record(&mut manifest, &grid_path)?;
    let history_path = out_dir.join("fit_history.csv");
    let mut rows = vec![vec![
        "stage".to_string(),
        "iteration".to_string(),
        "loss".to_string(),
        "step".to_string(),
    ]];
    for r in &outcome.history {
        rows.push(vec![
            r.stage.to_string(),
            r.iteration.to_string(),
            format!("{:.12e}", r.loss),
            format!("{:.12e}", r.step),
        ]);
    }
    io::write_csv(&history_path, &rows).map_err(|e| e.in_stage("fit"))?;
    record(&mut manifest, &history_path)?;

    // Stage: layer extraction.
    let extraction = ExtractionGrid::new(config.extract.dims, config.extract.extents)
        .map_err(|e| e.in_stage("extract"))?;
    let sets: Vec<(&str, SemanticSet)> = vec![
        ("body", SemanticSet::single(SEMANTIC_BODY)),
        ("cloth", SemanticSet::single(SEMANTIC_CLOTH)),
        ("hair", SemanticSet::single(SEMANTIC_HAIR)),
        (
            "body_cloth",
            SemanticSet::from_ids(&[SEMANTIC_BODY, SEMANTIC_CLOTH]),
        ),
        ("full", SemanticSet::all(3)),
    ];
    let mut extracted: Vec<(String, TriMesh)> = Vec::new();
    for (name, set) in &sets {
        let mesh = extract_layer(&grid, *set, &extraction).map_err(|e| e.in_stage("extract"))?;
        let obj = out_dir.join("extract").join(format!("{name}.obj"));
        io::write_obj(&mesh, &obj).map_err(|e| e.in_stage("extract"))?;
        record(&mut manifest, &obj)?;
        let ply = out_dir.join("extract").join(format!("{name}.ply"));
        io::write_ply(&mesh, &ply).map_err(|e| e.in_stage("extract"))?;
        record(&mut manifest, &ply)?;
        extracted.push((name.to_string(), mesh));
    }
    let find = |name: &str| -> &TriMesh {
        &extracted
            .iter()
            .find(|(n, _)| n == name)
            .expect("extraction set present")
            .1
    };

    // Stage: staged refinement against high-resolution targets.
    let refine_cameras = default_camera_rig(config.refine.resolution);
    let refine_levels =
        render_supervision_levels(&scene, &refine_cameras, config.refine.target_samples)
            .map_err(|e| e.in_stage("refine"))?;
    let pick = |id: LevelId| -> Vec<RenderTarget> {
        refine_levels
            .iter()
            .find(|l| l.id == id)
            .expect("all levels rendered")
            .targets
            .clone()
    };
    let refine_targets = RefineTargets {
        cameras: refine_cameras.clone(),
        body: pick(LevelId::Body),
        body_cloth: pick(LevelId::BodyCloth),
        full: pick(LevelId::Full),
    };
    let character = LayeredCharacter::new(
        find("body").clone(),
        find("cloth").clone(),
        find("hair").clone(),
    );
    let mut refine_cfg = crate::refine::RefineConfig {
        ..config.refine_config()
    };
    if dump_steps {
        let dump_dir = out_dir.join("refine").join("steps");
        fs::create_dir_all(&dump_dir)
            .map_err(|e| Error::io(dump_dir.display().to_string(), e))?;
    }
    let _ = &mut refine_cfg;
    let refined = refine_character(&character, &refine_targets, &refine_cfg)
        .map_err(|e| e.in_stage("refine"))?;
    for (name, mesh) in [
        ("body", &refined.body),
        ("cloth", &refined.cloth),
        ("hair", &refined.hair),
    ] {
        if mesh.is_empty() {
            continue;
        }
        let obj = out_dir.join("refine").join(format!("{name}.obj"));
        io::write_obj(mesh, &obj).map_err(|e| e.in_stage("refine"))?;
        record(&mut manifest, &obj)?;
    }

    // Stage: color back-projection and fill.
    let texture_cameras = default_camera_rig(config.texture.resolution);
    let textured = texture_character(
        &scene,
        &refined,
        &texture_cameras,
        config.texture.target_samples,
    )
    .map_err(|e| e.in_stage("texture"))?;
    for (name, mesh) in [
        ("body", &textured.body),
        ("cloth", &textured.cloth),
        ("hair", &textured.hair),
    ] {
        if mesh.is_empty() {
            continue;
        }
        let obj = out_dir.join("texture").join(format!("{name}.obj"));
        io::write_obj(mesh, &obj).map_err(|e| e.in_stage("texture"))?;
        record(&mut manifest, &obj)?;
        let ply = out_dir.join("texture").join(format!("{name}.ply"));
        io::write_ply(mesh, &ply).map_err(|e| e.in_stage("texture"))?;
        record(&mut manifest, &ply)?;
    }

    // Stage: metrics.
    let metric_rows = compute_metrics(config, &scene, &extracted, &refined)
        .map_err(|e| e.in_stage("metrics"))?;
    let metrics_path = out_dir.join("metrics.csv");
    let mut rows = vec![vec![
        "name".to_string(),
        "value".to_string(),
        "config_hash".to_string(),
    ]];
    for (name, value) in &metric_rows {
        rows.push(vec![
            name.clone(),
            format!("{value:.9}"),
            config_hash.clone(),
        ]);
    }
    io::write_csv(&metrics_path, &rows).map_err(|e| e.in_stage("metrics"))?;
    record(&mut manifest, &metrics_path)?;

    let manifest_path = out_dir.join("manifest.json");
    manifest.write(&manifest_path)?;
    Ok(PipelineOutcome {
        manifest,
        metrics: metric_rows,
        out_dir: out_dir.to_path_buf(),
    })
}

pub fn write_scene(scene: &AnalyticScene, path: &Path) -> Result<()> {
    io::create_parent(path)?;
    let text =
        toml::to_string_pretty(scene).map_err(|e| Error::Format(format!("scene: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_scene(path: &Path) -> Result<AnalyticScene> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let scene: AnalyticScene =
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    scene.validate()?;
    Ok(scene)
}

/// Writes the full buffer set of one render target; returns the paths.
pub fn write_target_images(target: &RenderTarget, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let rgb = dir.join(format!("{stem}_rgb.png"));
    io::write_rgb_png(target, &rgb)?;
    written.push(rgb);
    let alpha = dir.join(format!("{stem}_alpha.png"));
    io::write_alpha_png(target, &alpha)?;
    written.push(alpha);
    let sem = dir.join(format!("{stem}_semantic.png"));
    io::write_semantic_png(target, &sem)?;
    written.push(sem);
    let depth = dir.join(format!("{stem}_depth.pfm"));
    io::write_pfm_gray(&depth, target.width, target.height, &target.depth)?;
    written.push(depth);
    let normal = dir.join(format!("{stem}_normal.pfm"));
    io::write_pfm_color(&normal, target.width, target.height, &target.normal)?;
    written.push(normal);
    Ok(written)
}

/// Back-projects scene renders onto each refined layer and fills the rest by
/// graph diffusion. Visibility tests run against the whole layer stack.
pub fn texture_character(
    scene: &AnalyticScene,
    character: &LayeredCharacter,
    cameras: &[OrthoCamera],
    target_samples: usize,
) -> Result<LayeredCharacter> {
    let field = scene.field(FieldMode::Sdf);
    let opts = RenderOptions {
        n_samples: target_samples,
        beta: scene.beta,
    };
    let colors: Vec<RenderTarget> = cameras
        .iter()
        .map(|cam| render_view(&field, cam, None, &opts))
        .collect::<Result<Vec<_>>>()?;
    let stack: Vec<&TriMesh> = character
        .layers()
        .into_iter()
        .filter(|m| !m.is_empty())
        .collect();
    let raster: Vec<RenderTarget> = cameras
        .iter()
        .map(|cam| rasterize_layers_k(&stack, cam, &RasterOptions::default(), 3))
        .collect::<Result<Vec<_>>>()?;
    let covered: Vec<Vec<bool>> = raster.iter().map(|r| r.raster_coverage()).collect();

    let texture_one = |mesh: &TriMesh| -> Result<TriMesh> {
        if mesh.is_empty() {
            return Ok(mesh.clone());
        }
        let views: Vec<ProjectionView> = cameras
            .iter()
            .zip(&colors)
            .zip(&raster)
            .zip(&covered)
            .map(|(((camera, colors), raster), covered)| ProjectionView {
                camera,
                colors,
                stack_depth: &raster.depth,
                stack_covered: covered,
            })
            .collect();
        let (painted, mask) = backproject_colors(mesh, &views, &ViewWeightTable::default())?;
        Ok(fill_invisible(&painted, &mask)?.mesh)
    };
    Ok(LayeredCharacter {
        body: texture_one(&character.body)?,
        cloth: texture_one(&character.cloth)?,
        hair: texture_one(&character.hair)?,
        frozen: character.frozen,
    })
}

fn compute_metrics(
    config: &PipelineConfig,
    scene: &AnalyticScene,
    extracted: &[(String, TriMesh)],
    refined: &LayeredCharacter,
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    let gt_grid = ExtractionGrid::new(config.metrics.gt_dims, config.extract.extents)?;
    let field = scene.field(FieldMode::Sdf);
    let eval_cams = evaluation_rig(config.metrics.resolution);
    let seed = config.scene.seed;
    for (name, id) in [
        ("body", SEMANTIC_BODY),
        ("cloth", SEMANTIC_CLOTH),
        ("hair", SEMANTIC_HAIR),
    ] {
        let gt = extract_layer(&field, SemanticSet::single(id), &gt_grid)?;
        let fit_mesh = &extracted
            .iter()
            .find(|(n, _)| n == name)
            .expect("layer extracted")
            .1;
        let refined_mesh = refined.layer_for(SemanticSet::single(id)).expect("layer");
        if gt.is_empty() || fit_mesh.is_empty() {
            continue;
        }
        out.push((
            format!("iou_{name}_fit"),
            layer_mask_iou(fit_mesh, &gt, &eval_cams)?,
        ));
        if !refined_mesh.is_empty() {
            out.push((
                format!("iou_{name}"),
                layer_mask_iou(refined_mesh, &gt, &eval_cams)?,
            ));
            out.push((
                format!("chamfer_{name}_pre"),
                chamfer(fit_mesh, &gt, config.metrics.samples, seed)?,
            ));
            out.push((
                format!("chamfer_{name}"),
                chamfer(refined_mesh, &gt, config.metrics.samples, seed)?,
            ));
            out.push((
                format!("fscore_{name}"),
                fscore(refined_mesh, &gt, FSCORE_TAU, config.metrics.samples, seed)?,
            ));
        }
    }
    // Final collision per outer layer.
    if !refined.cloth.is_empty() && !refined.body.is_empty() {
        out.push((
            "collision_cloth".to_string(),
            collision_loss(&refined.cloth, &refined.body)?,
        ));
    }
    if !refined.hair.is_empty() {
        let inner = TriMesh::merged(
            &[&refined.body, &refined.cloth]
                .iter()
                .copied()
                .filter(|m| !m.is_empty())
                .collect::<Vec<_>>(),
        );
        if !inner.is_empty() {
            out.push((
                "collision_hair".to_string(),
                collision_loss(&refined.hair, &inner)?,
            ));
        }
    }
    Ok(out)
}

/// Eight-view mean mask IoU between two meshes (hard raster coverage).
pub fn layer_mask_iou(a: &TriMesh, b: &TriMesh, cameras: &[OrthoCamera]) -> Result<f64> {
    let opts = RasterOptions::default();
    let mut total = 0.0;
    for cam in cameras {
        let ra = rasterize_layers_k(&[a], cam, &opts, 1)?;
        let rb = rasterize_layers_k(&[b], cam, &opts, 1)?;
        total += mask_iou(&ra.raster_coverage(), &rb.raster_coverage())?;
    }
    Ok(total / cameras.len() as f64)
}

/// Renders one level of a persisted scene into image files (CLI `render`).
pub fn render_level_images(
    scene: &AnalyticScene,
    level: LevelId,
    resolution: u32,
    n_samples: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let cameras = default_camera_rig(resolution);
    let kept = level.kept(scene.semantic_count);
    let field = scene.field(FieldMode::Sdf);
    let opts = RenderOptions {
        n_samples,
        beta: scene.beta,
    };
    let mut written = Vec::new();
    for (view, cam) in cameras.iter().enumerate() {
        let target = render_view(&field, cam, Some(kept), &opts)?;
        written.extend(write_target_images(
            &target,
            out_dir,
            &format!("{}_{view}", level.name()),
        )?);
    }
    Ok(written)
}

/// Parses a semantic-set name: a label, `a+b` unions, or `all`.
pub fn parse_semantics(s: &str) -> Result<SemanticSet> {
    if s == "all" || s == "full" {
        return Ok(SemanticSet::all(3));
    }
    let mut set = SemanticSet::EMPTY;
    for part in s.split('+') {
        let id = match part {
            "body" => SEMANTIC_BODY,
            "cloth" => SEMANTIC_CLOTH,
            "hair" => SEMANTIC_HAIR,
            other => match other.parse::<u8>() {
                Ok(i) if (i as usize) < 3 => SemanticId(i),
                _ => {
                    return Err(Error::Config(format!("unknown semantic \"{other}\"")));
                }
            },
        };
        set.insert(id);
    }
    set.check(3)?;
    Ok(set)
}
