//! Pipeline commands behind the CLI. Each command reads its inputs per
//! the run configuration, drives the module chain, and writes outputs
//! atomically, alongside a `run_metadata.txt` that pins the config hash
//! and seed so a run can be reproduced exactly.

use crate::config::RunConfig;
use crate::coreg::{
    coarse_align_xy, coarse_align_z, rasterize_density, remove_facade_points, robust_icp,
    sobel_edges, transfer_labels, xy_shift_to_world, RigidTransform3,
};
use crate::dataprep::{augment, extract_patches, split_train_test, SplitSpec};
use crate::densecrf::{map_labeling, mean_field_infer_with, MessageMode};
use crate::eval::{precision_recall, segmentation_metrics, ConfusionMatrix};
use crate::io::{
    self, atomic_write, patch_basename, read_cloud_csv, read_footprints, read_label_raster,
    read_mask_pgm, read_pgm, read_transform, read_unary, write_cloud_csv, write_manifest,
    write_mask_pgm, write_pgm, write_transform, MetricsReport, PatchRecord,
};
use crate::label::{classify_cloud, dilate, rasterize_building_points, FootprintPolygon};
use crate::tomosim::generate_scene_cloud;
use sha2::{Digest, Sha256};
use std::error::Error;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// A module failure wrapped with the pipeline stage that hit it.
#[derive(Error, Debug)]
#[error("stage {stage}: {source}")]
pub struct CommandError {
    pub stage: &'static str,
    #[source]
    pub source: Box<dyn Error + Send + Sync>,
}

fn at<E: Into<Box<dyn Error + Send + Sync>>>(stage: &'static str) -> impl FnOnce(E) -> CommandError {
    move |e| CommandError {
        stage,
        source: e.into(),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Reproducibility record: command, crate version, config hash, seed,
/// and the resolved input paths. Deliberately free of timestamps and
/// thread counts so reruns are byte-identical.
fn write_run_metadata(
    stage: &'static str,
    out_dir: &Path,
    config: &RunConfig,
    seed: Option<u64>,
    inputs: &[(&str, &Path)],
) -> Result<(), CommandError> {
    let mut text = format!(
        "command = {stage}\nversion = {}\nconfig_sha256 = {}\n",
        env!("CARGO_PKG_VERSION"),
        sha256_hex(config.raw_bytes())
    );
    match seed {
        Some(s) => text.push_str(&format!("seed = {s}\n")),
        None => text.push_str("seed = none\n"),
    }
    for (key, path) in inputs {
        text.push_str(&format!("input.{key} = {}\n", path.display()));
    }
    atomic_write(&out_dir.join("run_metadata.txt"), text.as_bytes()).map_err(at(stage))
}

fn footprint_polygons(footprints: &[io::Footprint]) -> Vec<FootprintPolygon> {
    footprints.iter().map(|f| f.polygon.clone()).collect()
}

/// Generates the synthetic scene cloud with ground-truth classes.
pub fn cmd_simulate(config: &RunConfig, out_dir: &Path) -> Result<(), CommandError> {
    const STAGE: &str = "simulate";
    let seed = config.seed().map_err(at(STAGE))?;
    let (footprints, fp_path) = match config.get("io.footprints") {
        Some(_) => {
            let path = config.input_path("io.footprints").map_err(at(STAGE))?;
            (read_footprints(&path).map_err(at(STAGE))?, Some(path))
        }
        None => (Vec::new(), None),
    };
    let spec = config.scene_spec(&footprints).map_err(at(STAGE))?;
    let cloud = generate_scene_cloud(&spec, seed).map_err(at(STAGE))?;

    let out = out_dir.join("cloud.csv");
    write_cloud_csv(&out, &cloud).map_err(at(STAGE))?;
    let inputs: Vec<(&str, &Path)> = fp_path
        .as_deref()
        .map(|p| vec![("footprints", p)])
        .unwrap_or_default();
    write_run_metadata(STAGE, out_dir, config, Some(seed), &inputs)?;
    println!(
        "simulate: {} points ({} buildings) -> {}",
        cloud.len(),
        spec.buildings.len(),
        out.display()
    );
    Ok(())
}

/// Classifies a cloud against footprints and rasterizes the building
/// mask in the radar frame.
pub fn cmd_label(config: &RunConfig, out_dir: &Path) -> Result<(), CommandError> {
    const STAGE: &str = "label";
    let cloud_path = config.input_path("io.cloud").map_err(at(STAGE))?;
    let fp_path = config.input_path("io.footprints").map_err(at(STAGE))?;
    let cloud = read_cloud_csv(&cloud_path).map_err(at(STAGE))?;
    let polys = footprint_polygons(&read_footprints(&fp_path).map_err(at(STAGE))?);
    for p in &polys {
        p.validate().map_err(at(STAGE))?;
    }

    let labeled = classify_cloud(&cloud, &polys);
    let geometry = config.sensor_geometry().map_err(at(STAGE))?;
    let (mask, stats) = rasterize_building_points(&labeled, &geometry).map_err(at(STAGE))?;
    let (radius, iterations) = config.dilation().map_err(at(STAGE))?;
    let mask = dilate(&mask, radius, iterations);

    let labeled_path = out_dir.join("labeled.csv");
    let mask_path = out_dir.join("mask.pgm");
    write_cloud_csv(&labeled_path, &labeled).map_err(at(STAGE))?;
    write_mask_pgm(&mask_path, &mask).map_err(at(STAGE))?;
    write_run_metadata(
        STAGE,
        out_dir,
        config,
        None,
        &[("cloud", &cloud_path), ("footprints", &fp_path)],
    )?;
    println!(
        "label: {} building points, {} rasterized, {} out of frame, {} wrong side -> {}",
        stats.building_points,
        stats.rasterized,
        stats.out_of_frame,
        stats.wrong_side,
        mask_path.display()
    );
    Ok(())
}

/// Registers cloud B onto cloud A: density-edge coarse alignment in the
/// plane, height-histogram alignment in z, facade removal, then robust
/// ICP refinement.
pub fn cmd_coregister(config: &RunConfig, out_dir: &Path) -> Result<(), CommandError> {
    const STAGE: &str = "coregister";
    let path_a = config.input_path("io.cloud_a").map_err(at(STAGE))?;
    let path_b = config.input_path("io.cloud_b").map_err(at(STAGE))?;
    let cloud_a = read_cloud_csv(&path_a).map_err(at(STAGE))?;
    let cloud_b = read_cloud_csv(&path_b).map_err(at(STAGE))?;

    let cell = config.coreg_cell_size().map_err(at(STAGE))?;
    let density_a = rasterize_density(&cloud_a, cell).map_err(at(STAGE))?;
    let density_b = rasterize_density(&cloud_b, cell).map_err(at(STAGE))?;
    let edges_a = sobel_edges(&density_a.to_values(), None).map_err(at(STAGE))?;
    let edges_b = sobel_edges(&density_b.to_values(), None).map_err(at(STAGE))?;
    let max_shift = config.coreg_max_shift().map_err(at(STAGE))?;
    let shift = coarse_align_xy(&edges_a, &edges_b, max_shift).map_err(at(STAGE))?;
    let (de, dn) = xy_shift_to_world(&edges_a, &edges_b, &shift);
    let z_bin = config.coreg_z_bin().map_err(at(STAGE))?;
    let dz = coarse_align_z(&cloud_a, &cloud_b, z_bin).map_err(at(STAGE))?;
    let coarse = RigidTransform3::from_translation([de, dn, dz]);

    let spread = config.coreg_spread_threshold().map_err(at(STAGE))?;
    let filt_a = remove_facade_points(&cloud_a, cell, spread).map_err(at(STAGE))?;
    let filt_b = remove_facade_points(&cloud_b, cell, spread).map_err(at(STAGE))?;
    let params = config.icp_params().map_err(at(STAGE))?;
    let result = robust_icp(&filt_b, &filt_a, &coarse, params).map_err(at(STAGE))?;

    let out = out_dir.join("transform.txt");
    write_transform(&out, &result.transform, result.iterations, result.mean_distance)
        .map_err(at(STAGE))?;
    write_run_metadata(
        STAGE,
        out_dir,
        config,
        None,
        &[("cloud_a", &path_a), ("cloud_b", &path_b)],
    )?;
    println!(
        "coregister: coarse shift ({de:.2}, {dn:.2}, {dz:.2}) m, {} ICP iterations, \
         mean residual {:.4} m -> {}",
        result.iterations,
        result.mean_distance,
        out.display()
    );
    Ok(())
}

/// Transfers classes from a georeferenced label raster onto a cloud via
/// a previously estimated transform, then rasterizes the building mask.
pub fn cmd_label_optical(config: &RunConfig, out_dir: &Path) -> Result<(), CommandError> {
    const STAGE: &str = "label-optical";
    let cloud_path = config.input_path("io.cloud").map_err(at(STAGE))?;
    let raster_path = config.input_path("io.label_raster").map_err(at(STAGE))?;
    let georef_path = config.input_path("io.georef").map_err(at(STAGE))?;
    let transform_path = config.input_path("io.transform").map_err(at(STAGE))?;

    let cloud = read_cloud_csv(&cloud_path).map_err(at(STAGE))?;
    let label_raster = read_label_raster(&raster_path, &georef_path).map_err(at(STAGE))?;
    let transform = read_transform(&transform_path).map_err(at(STAGE))?;
    let labeled = transfer_labels(&label_raster, &cloud, &transform).map_err(at(STAGE))?;

    let geometry = config.sensor_geometry().map_err(at(STAGE))?;
    let (mask, stats) = rasterize_building_points(&labeled, &geometry).map_err(at(STAGE))?;
    let (radius, iterations) = config.dilation().map_err(at(STAGE))?;
    let mask = dilate(&mask, radius, iterations);

    let labeled_path = out_dir.join("labeled.csv");
    let mask_path = out_dir.join("mask.pgm");
    write_cloud_csv(&labeled_path, &labeled).map_err(at(STAGE))?;
    write_mask_pgm(&mask_path, &mask).map_err(at(STAGE))?;
    write_run_metadata(
        STAGE,
        out_dir,
        config,
        None,
        &[
            ("cloud", &cloud_path),
            ("label_raster", &raster_path),
            ("georef", &georef_path),
            ("transform", &transform_path),
        ],
    )?;
    println!(
        "label-optical: {} building points, {} rasterized -> {}",
        stats.building_points,
        stats.rasterized,
        mask_path.display()
    );
    Ok(())
}

/// Sharpens a unary field with dense-CRF mean-field inference guided by
/// the intensity image, then writes the MAP mask.
pub fn cmd_crf_refine(config: &RunConfig, out_dir: &Path) -> Result<(), CommandError> {
    const STAGE: &str = "crf-refine";
    let unary_path = config.input_path("io.unary").map_err(at(STAGE))?;
    let intensity_path = config.input_path("io.intensity").map_err(at(STAGE))?;
    let unary = read_unary(&unary_path).map_err(at(STAGE))?;
    let intensity = read_pgm(&intensity_path).map_err(at(STAGE))?;
    let image = intensity.map(|&v| v as f64);

    let pw = config.crf_params().map_err(at(STAGE))?;
    let iterations = config.crf_iterations().map_err(at(STAGE))?;
    // exact messages are O(N^2); beyond a few thousand pixels fall back
    // to a window sized so the widest kernel has decayed at the border
    let auto_radius = (3.0 * pw.max_spatial_bandwidth()).ceil().max(1.0) as usize;
    let mode = match config.get("crf.mode").unwrap_or("auto") {
        "exact" => MessageMode::Exact,
        "windowed" => MessageMode::Windowed {
            radius: config.usize("crf.window_radius", auto_radius).map_err(at(STAGE))?,
        },
        "auto" => {
            if unary.pixels() <= 4096 {
                MessageMode::Exact
            } else {
                MessageMode::Windowed {
                    radius: auto_radius,
                }
            }
        }
        other => {
            return Err(at(STAGE)(format!(
                "crf.mode must be exact, windowed, or auto, got {other:?}"
            )))
        }
    };
    let q = mean_field_infer_with(&unary, &pw, &image, iterations, mode).map_err(at(STAGE))?;
    let labeling = map_labeling(&q);

    let out = out_dir.join("refined.pgm");
    if unary.labels() == 2 {
        write_mask_pgm(&out, &labeling).map_err(at(STAGE))?;
    } else {
        write_pgm(&out, &labeling).map_err(at(STAGE))?;
    }
    write_run_metadata(
        STAGE,
        out_dir,
        config,
        None,
        &[("unary", &unary_path), ("intensity", &intensity_path)],
    )?;
    println!(
        "crf-refine: {} iterations over {} pixels ({} labels) -> {}",
        iterations,
        unary.pixels(),
        unary.labels(),
        out.display()
    );
    Ok(())
}

/// Scores a predicted mask against a reference mask, or a raw count
/// quadruple in counts-only mode, and writes the metrics report.
pub fn cmd_evaluate(
    config: &RunConfig,
    out_dir: &Path,
    counts: Option<(u64, u64, u64, u64)>,
) -> Result<(), CommandError> {
    const STAGE: &str = "evaluate";
    let (cm, counts, inputs) = match counts {
        Some((tp, fp, fneg, tn)) => (
            ConfusionMatrix::from_binary_counts(tp, fp, fneg, tn),
            (tp, fp, fneg, tn),
            Vec::new(),
        ),
        None => {
            let pred_path = config.input_path("io.pred_mask").map_err(at(STAGE))?;
            let ref_path = config.input_path("io.ref_mask").map_err(at(STAGE))?;
            let pred = read_mask_pgm(&pred_path).map_err(at(STAGE))?;
            let reference = read_mask_pgm(&ref_path).map_err(at(STAGE))?;
            let cm = ConfusionMatrix::from_masks(&pred, &reference, 2).map_err(at(STAGE))?;
            let counts = cm.binary_counts().expect("two-class matrix");
            (cm, counts, vec![pred_path, ref_path])
        }
    };
    let seg = segmentation_metrics(&cm).map_err(at(STAGE))?;
    let pr = precision_recall(counts.0, counts.1, counts.2);
    let report = MetricsReport::new(&seg, &pr, counts);

    atomic_write(&out_dir.join("metrics.json"), report.to_json().as_bytes())
        .map_err(at(STAGE))?;
    atomic_write(&out_dir.join("metrics.txt"), report.to_text().as_bytes())
        .map_err(at(STAGE))?;
    let input_pairs: Vec<(&str, &Path)> = match inputs.as_slice() {
        [p, r] => vec![("pred_mask", p.as_path()), ("ref_mask", r.as_path())],
        _ => Vec::new(),
    };
    write_run_metadata(STAGE, out_dir, config, None, &input_pairs)?;
    let pct = |v: Option<f64>| match v {
        Some(x) => format!("{x:.2}"),
        None => "undefined".to_string(),
    };
    println!(
        "evaluate: pa {:.2}, miu {:.2}, precision {}, recall {}",
        seg.pa,
        seg.miu,
        pct(pr.precision),
        pct(pr.recall)
    );
    Ok(())
}

/// Cuts an image/mask pair into overlapping patches, applies the
/// configured symmetries, and writes the patch files, manifest, and
/// train/test split.
pub fn cmd_patchify(config: &RunConfig, out_dir: &Path) -> Result<(), CommandError> {
    const STAGE: &str = "patchify";
    let image_path = config.input_path("io.image").map_err(at(STAGE))?;
    let mask_path = config.input_path("io.mask").map_err(at(STAGE))?;
    let image = read_pgm(&image_path).map_err(at(STAGE))?;
    let mask = read_mask_pgm(&mask_path).map_err(at(STAGE))?;
    let spec = config.patch_spec().map_err(at(STAGE))?;
    let ops = config.augmentations().map_err(at(STAGE))?;
    let source: String = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string());

    let patches = extract_patches(&image, &mask, &spec).map_err(at(STAGE))?;
    let mut records = Vec::new();
    let mut tile_ids = Vec::new();
    for patch in &patches {
        tile_ids.push(format!("tile_{}_{}", patch.origin.0, patch.origin.1));
        for (op, augmented) in augment(patch, &ops).map_err(at(STAGE))? {
            let base = patch_basename(augmented.origin, op);
            write_pgm(&out_dir.join(format!("{base}.img.pgm")), &augmented.image)
                .map_err(at(STAGE))?;
            write_mask_pgm(&out_dir.join(format!("{base}.mask.pgm")), &augmented.mask)
                .map_err(at(STAGE))?;
            records.push(PatchRecord {
                name: base,
                origin: augmented.origin,
                augmentation: op,
                source: source.clone(),
            });
        }
    }
    write_manifest(&out_dir.join("manifest.txt"), &records).map_err(at(STAGE))?;

    // split whole tiles, not augmented variants, so no tile leaks
    // across the boundary
    let split = match (config.get("dataprep.train_tiles"), config.get("dataprep.test_tiles")) {
        (Some(train), Some(test)) => SplitSpec::Explicit {
            train: train.split(',').map(|s| s.trim().to_string()).collect(),
            test: test.split(',').map(|s| s.trim().to_string()).collect(),
        },
        _ => SplitSpec::Ratio {
            train_fraction: config.train_fraction().map_err(at(STAGE))?,
            seed: config.seed().map_err(at(STAGE))?,
        },
    };
    let (train, test) = split_train_test(&tile_ids, &split).map_err(at(STAGE))?;
    let mut split_text = String::new();
    for t in &train {
        split_text.push_str(&format!("train {t}\n"));
    }
    for t in &test {
        split_text.push_str(&format!("test {t}\n"));
    }
    atomic_write(&out_dir.join("split.txt"), split_text.as_bytes()).map_err(at(STAGE))?;

    write_run_metadata(
        STAGE,
        out_dir,
        config,
        config.u64_opt("run.seed").ok().flatten(),
        &[("image", &image_path), ("mask", &mask_path)],
    )?;
    println!(
        "patchify: {} patches x {} symmetries, {} train / {} test tiles -> {}",
        patches.len(),
        ops.len(),
        train.len(),
        test.len(),
        out_dir.display()
    );
    Ok(())
}

/// Resolves the output directory (flag, then config, then cwd) and
/// makes sure it exists.
pub fn resolve_out_dir(config: &RunConfig, flag: Option<PathBuf>) -> Result<PathBuf, CommandError> {
    const STAGE: &str = "setup";
    let dir = flag.unwrap_or_else(|| {
        PathBuf::from(config.get("io.out_dir").unwrap_or("."))
    });
    std::fs::create_dir_all(&dir).map_err(at(STAGE))?;
    Ok(dir)
}

/// Parses the counts-only evaluation argument `tp,fp,fn,tn`.
pub fn parse_counts(raw: &str) -> Result<(u64, u64, u64, u64), CommandError> {
    const STAGE: &str = "evaluate";
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    let [tp, fp, fneg, tn] = parts.as_slice() else {
        return Err(at(STAGE)(format!(
            "expected --counts tp,fp,fn,tn, got {raw:?}"
        )));
    };
    let parse = |s: &str| -> Result<u64, CommandError> {
        s.parse().map_err(|_| at(STAGE)(format!("bad count {s:?}")))
    };
    Ok((parse(tp)?, parse(fp)?, parse(fneg)?, parse(tn)?))
}
