use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use cellpheno::analyze::{
    cluster_group, euclidean_dissimilarity, mds_embed, retrieve_representatives, scatter_png,
    stratified_subsample, ClusterModel,
};
use cellpheno::config::PipelineConfig;
use cellpheno::features::{
    compute_features_on_channel, group_stats, luma, normalize, read_features_csv,
    write_features_csv, FeatureMatrix, FeatureVector, IntensityChannel, MeanStd,
};
use cellpheno::imagecore::{
    cells_from_labels, load_label_raster, load_manifest, save_label_raster, save_rgb_png,
    write_atomic, write_instance_mask, CohortManifest, ManifestEntry, ScalarImage, ValueKind,
};
use cellpheno::learn::prune as prune_cohort;
use cellpheno::rng::derive;
use cellpheno::segment::segment_hematoxylin;
use cellpheno::stain::{compute_lab_stats, deconvolve, normalize_to_target, LabStats};
use cellpheno::synth::synth_cohort;
use cellpheno::{CellInstance, Error, Group, RegionImage};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::provenance::{digest_inputs, up_to_date, write_record};
use crate::{RunOptions, Stage, StageError, StageOutcome, StageResult};

const SCATTER_SIZE: u32 = 800;

/// Run `body` in a fresh stage directory unless the existing outputs are
/// still valid for this config and these inputs.
fn cached(
    stage: Stage,
    opts: &RunOptions,
    inputs: &[PathBuf],
    body: impl FnOnce(&Path) -> StageResult<()>,
) -> StageResult<StageOutcome> {
    let dir = opts.layout().dir(stage);
    let digests = digest_inputs(inputs)?;
    if !opts.force && up_to_date(&dir, stage, &opts.config, &digests) {
        log::info!("{stage}: outputs in {} are up to date", dir.display());
        return Ok(StageOutcome {
            stage,
            dir,
            skipped: true,
        });
    }
    let fail = |e: std::io::Error| StageError::Failure(format!("{}: {e}", dir.display()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(fail)?;
    }
    std::fs::create_dir_all(&dir).map_err(fail)?;
    log::info!("{stage}: writing {}", dir.display());
    body(&dir)?;
    write_record(&dir, stage, &opts.config, digests)?;
    Ok(StageOutcome {
        stage,
        dir,
        skipped: false,
    })
}

fn seed_for(cfg: &PipelineConfig, stage: Stage, path: &[u64]) -> u64 {
    let mut p = vec![stage.stream()];
    p.extend_from_slice(path);
    derive(cfg.seed, &p)
}

fn require_file(path: &Path, what: &str) -> StageResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(StageError::Input(format!(
            "missing input: {what} {}",
            path.display()
        )))
    }
}

fn write_csv(path: &Path, header: &[String], rows: Vec<Vec<String>>) -> StageResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let enc = |e: csv::Error| StageError::Failure(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(enc)?;
    for r in rows {
        w.write_record(&r).map_err(enc)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| StageError::Failure(format!("{}: {e}", path.display())))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> StageResult<()> {
    let bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| StageError::Failure(format!("{}: {e}", path.display())))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

fn write_manifest(path: &Path, entries: Vec<ManifestEntry>) -> StageResult<()> {
    let manifest = CohortManifest::from_entries(entries)?;
    let mut buf = Vec::new();
    manifest.write_csv(&mut buf, path.parent().unwrap_or(Path::new("")))?;
    write_atomic(path, &buf)?;
    Ok(())
}

fn read_manifest(path: &Path) -> StageResult<CohortManifest> {
    require_file(path, "manifest")?;
    let m =
        load_manifest(path).map_err(|e| StageError::Input(format!("{}: {e}", path.display())))?;
    if m.entries.is_empty() {
        return Err(StageError::Input(format!(
            "{} lists no images",
            path.display()
        )));
    }
    for e in &m.entries {
        if e.id.is_empty() || e.id.contains(['/', '\\']) || e.id.starts_with('.') {
            return Err(StageError::Input(format!(
                "image id `{}` cannot be used as a file name",
                e.id
            )));
        }
    }
    Ok(m)
}

fn read_features(path: &Path) -> StageResult<Vec<FeatureVector>> {
    require_file(path, "features CSV")?;
    let file = std::fs::File::open(path)
        .map_err(|e| StageError::Input(format!("{}: {e}", path.display())))?;
    let rows = read_features_csv(file)
        .map_err(|e| StageError::Input(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(StageError::Input(format!("{} has no rows", path.display())));
    }
    Ok(rows)
}

fn read_ids(path: &Path) -> StageResult<Vec<String>> {
    require_file(path, "retained ids")?;
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| StageError::Input(format!("{}: {e}", path.display())))?;
    let bad = |e: csv::Error| StageError::Input(format!("{}: {e}", path.display()));
    let headers = rdr.headers().map_err(bad)?.clone();
    let col = headers
        .iter()
        .position(|h| h == "cell_id")
        .ok_or_else(|| StageError::Input(format!("{} has no `cell_id` column", path.display())))?;
    let mut ids = Vec::new();
    for rec in rdr.records() {
        ids.push(rec.map_err(bad)?[col].to_string());
    }
    Ok(ids)
}

/// Z-scores over the whole cohort, so every downstream stage shares one
/// feature space.
fn normalized(rows: Vec<FeatureVector>) -> StageResult<FeatureMatrix> {
    Ok(normalize(&FeatureMatrix::new(rows))?)
}

/// Cohort-normalized rows restricted to the retained cells.
fn retained_matrix(rows: Vec<FeatureVector>, ids: &[String]) -> StageResult<FeatureMatrix> {
    let known: HashSet<&str> = rows.iter().map(|r| r.cell_id.as_str()).collect();
    if let Some(bad) = ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(StageError::Input(format!(
            "retained id `{bad}` is not in the features table"
        )));
    }
    let keep: HashSet<String> = ids.iter().cloned().collect();
    let m = normalized(rows)?.subset(&keep);
    if m.len() < 2 {
        return Err(StageError::Invariant(format!(
            "{} retained cells are too few to analyze",
            m.len()
        )));
    }
    Ok(m)
}

fn png_name(id: &str) -> String {
    format!("{id}.png")
}

pub(crate) fn synth(opts: &RunOptions) -> StageResult<StageOutcome> {
    let cfg = &opts.config;
    cached(Stage::Synth, opts, &[], |dir| {
        let stains = cfg.stain.stain_matrix()?;
        let [w, h] = cfg.synth.image_size;
        let (images, truth) = synth_cohort(
            &cfg.synth.groups,
            cfg.synth.n_images,
            (w, h),
            &stains,
            seed_for(cfg, Stage::Synth, &[]),
        )?;
        images
            .par_iter()
            .zip(truth.images.par_iter())
            .try_for_each(|(img, gt)| -> StageResult<()> {
                save_rgb_png(&dir.join("images").join(png_name(&img.id)), &img.pixels)?;
                let raster = write_instance_mask(&gt.masks, (h, w))?;
                save_label_raster(&dir.join("labels").join(png_name(&img.id)), &raster)?;
                Ok(())
            })?;
        let entries = images
            .iter()
            .map(|img| ManifestEntry {
                path: dir.join("images").join(png_name(&img.id)),
                id: img.id.clone(),
                group: img.group,
            })
            .collect();
        write_manifest(&dir.join("manifest.csv"), entries)?;
        write_json(&dir.join("ground_truth.json"), &truth)?;
        log::info!(
            "synth: {} images, {} cells",
            images.len(),
            truth.cells().count()
        );
        Ok(())
    })
}

fn normalization_target(
    cfg: &PipelineConfig,
    manifest: &CohortManifest,
) -> StageResult<Option<LabStats>> {
    if let Some(t) = cfg.stain.target {
        return Ok(Some(t));
    }
    let Some(id) = &cfg.stain.reference_image else {
        return Ok(None);
    };
    let entry = manifest
        .entries
        .iter()
        .find(|e| &e.id == id)
        .ok_or_else(|| {
            StageError::Input(format!("reference image `{id}` is not in the manifest"))
        })?;
    Ok(Some(compute_lab_stats(&entry.load()?)))
}

pub(crate) fn segment(opts: &RunOptions) -> StageResult<StageOutcome> {
    let cfg = &opts.config;
    let manifest_path = opts
        .input
        .clone()
        .unwrap_or_else(|| opts.layout().synth_manifest());
    let manifest = read_manifest(&manifest_path)?;
    let mut inputs = vec![manifest_path];
    inputs.extend(manifest.entries.iter().map(|e| e.path.clone()));
    cached(Stage::Segment, opts, &inputs, |dir| {
        let stains = cfg.stain.stain_matrix()?;
        let target = normalization_target(cfg, &manifest)?;
        let counts = manifest
            .entries
            .par_iter()
            .map(|e| -> StageResult<(String, Group, usize)> {
                let img = e.load()?;
                let img = match &target {
                    Some(t) => normalize_to_target(&img, t),
                    None => img,
                };
                let (hema, _) = deconvolve(&img, &stains)?;
                let cells = segment_hematoxylin(&hema, &img.id, &cfg.segment)?;
                let raster = write_instance_mask(&cells, (img.height(), img.width()))?;
                save_label_raster(&dir.join("labels").join(png_name(&e.id)), &raster)?;
                save_rgb_png(&dir.join("images").join(png_name(&e.id)), &img.pixels)?;
                Ok((e.id.clone(), e.group, cells.len()))
            })
            .collect::<StageResult<Vec<_>>>()?;
        let entries = manifest
            .entries
            .iter()
            .map(|e| ManifestEntry {
                path: dir.join("images").join(png_name(&e.id)),
                id: e.id.clone(),
                group: e.group,
            })
            .collect();
        write_manifest(&dir.join("manifest.csv"), entries)?;
        let rows = counts
            .iter()
            .map(|(id, g, n)| vec![id.clone(), g.to_string(), n.to_string()])
            .collect();
        let header = ["image_id", "group", "n_cells"].map(String::from);
        write_csv(&dir.join("segments.csv"), &header, rows)?;
        let total: usize = counts.iter().map(|c| c.2).sum();
        log::info!(
            "segment: {total} cells in {} images{}",
            counts.len(),
            if target.is_some() {
                " (stain-normalized)"
            } else {
                ""
            }
        );
        Ok(())
    })
}

fn label_path(seg_dir: &Path, id: &str) -> PathBuf {
    seg_dir.join("labels").join(png_name(id))
}

fn load_cells(seg_dir: &Path, e: &ManifestEntry) -> StageResult<(RegionImage, Vec<CellInstance>)> {
    let img = e.load()?;
    let raster = load_label_raster(&label_path(seg_dir, &e.id))?;
    if (raster.width, raster.height) != (img.width(), img.height()) {
        return Err(StageError::Input(format!(
            "label raster for `{}` is {}x{}, image is {}x{}",
            e.id,
            raster.width,
            raster.height,
            img.width(),
            img.height()
        )));
    }
    let cells = cells_from_labels(&raster, &e.id)?;
    Ok((img, cells))
}

fn group_stats_json(
    matrix: &FeatureMatrix,
) -> StageResult<BTreeMap<String, BTreeMap<String, MeanStd>>> {
    let stats = group_stats(matrix)?;
    let mut out: BTreeMap<String, BTreeMap<String, MeanStd>> = BTreeMap::new();
    for ((g, f), v) in stats {
        out.entry(g.to_string())
            .or_default()
            .insert(f.name().to_string(), v);
    }
    Ok(out)
}

pub(crate) fn features(opts: &RunOptions) -> StageResult<StageOutcome> {
    let cfg = &opts.config;
    let seg_dir = opts
        .input
        .clone()
        .unwrap_or_else(|| opts.layout().dir(Stage::Segment));
    let manifest = read_manifest(&seg_dir.join("manifest.csv"))?;
    let mut inputs = vec![seg_dir.join("manifest.csv")];
    for e in &manifest.entries {
        inputs.push(e.path.clone());
        inputs.push(label_path(&seg_dir, &e.id));
    }
    cached(Stage::Features, opts, &inputs, |dir| {
        let stains = cfg.stain.stain_matrix()?;
        let per_image = manifest
            .entries
            .par_iter()
            .map(|e| -> StageResult<Vec<FeatureVector>> {
                let (img, cells) = load_cells(&seg_dir, e)?;
                let (channel, range) = match cfg.features.channel {
                    IntensityChannel::Luma => {
                        let w = img.width() as usize;
                        let ch = ScalarImage::from_fn(
                            w,
                            img.height() as usize,
                            ValueKind::Intensity,
                            |x, y| luma(img.rgb(x as u32, y as u32)),
                        )?;
                        (ch, (0.0, 256.0))
                    }
                    IntensityChannel::Hematoxylin => {
                        let [lo, hi] = cfg.features.hematoxylin_range;
                        (deconvolve(&img, &stains)?.0, (lo, hi))
                    }
                };
                cells
                    .iter()
                    .map(|c| {
                        Ok(compute_features_on_channel(
                            c,
                            e.group,
                            &channel,
                            range,
                            cfg.features.bins,
                        )?)
                    })
                    .collect()
            })
            .collect::<StageResult<Vec<_>>>()?;
        let rows: Vec<FeatureVector> = per_image.into_iter().flatten().collect();
        let mut buf = Vec::new();
        write_features_csv(&rows, &mut buf)?;
        write_atomic(&dir.join("features.csv"), &buf)?;
        let matrix = FeatureMatrix::new(rows);
        if Group::ALL
            .iter()
            .all(|g| matrix.rows.iter().any(|r| r.group == *g))
        {
            write_json(&dir.join("group_stats.json"), &group_stats_json(&matrix)?)?;
        } else {
            log::warn!("features: only one group present, group_stats.json not written");
        }
        log::info!("features: {} cells", matrix.len());
        Ok(())
    })
}

pub(crate) fn prune(opts: &RunOptions) -> StageResult<StageOutcome> {
    let cfg = &opts.config;
    let path = opts
        .input
        .clone()
        .unwrap_or_else(|| opts.layout().features_csv());
    let rows = read_features(&path)?;
    cached(Stage::Prune, opts, &[path], |dir| {
        let matrix = normalized(rows)?;
        let ids: Vec<String> = matrix.rows.iter().map(|r| r.cell_id.clone()).collect();
        let x: Vec<Vec<f64>> = matrix.rows.iter().map(|r| r.values().to_vec()).collect();
        let y: Vec<usize> = matrix.rows.iter().map(|r| r.group.class_index()).collect();
        let pc = cfg.learn.prune_config(seed_for(cfg, Stage::Prune, &[]));
        match prune_cohort(&ids, &x, &y, &pc, &cfg.learn.classifiers) {
            Ok((kept, report)) => {
                let header = ["cell_id".to_string()];
                write_csv(
                    &dir.join("retained_ids.csv"),
                    &header,
                    kept.into_iter().map(|id| vec![id]).collect(),
                )?;
                write_json(&dir.join("prune_report.json"), &report)?;
                let f = report.retained_fractions();
                log::info!("prune: retained fractions {f:?}");
                Ok(())
            }
            Err(Error::PrunedToDegenerate { iteration, report }) => {
                write_json(&dir.join("prune_report.json"), &report)?;
                Err(StageError::Invariant(format!(
                    "pruning removed every instance of a class at iteration {iteration}"
                )))
            }
            Err(e) => Err(e.into()),
        }
    })
}

pub(crate) fn embed(opts: &RunOptions) -> StageResult<StageOutcome> {
    let cfg = &opts.config;
    let layout = opts.layout();
    let path = opts.input.clone().unwrap_or_else(|| layout.features_csv());
    let retained = layout.retained_csv();
    let rows = read_features(&path)?;
    let ids = read_ids(&retained)?;
    cached(Stage::Embed, opts, &[path, retained], |dir| {
        let matrix = retained_matrix(rows, &ids)?;
        let groups: Vec<Group> = matrix.rows.iter().map(|r| r.group).collect();
        let pick = stratified_subsample(
            &groups,
            cfg.analyze.max_mds_points,
            seed_for(cfg, Stage::Embed, &[0]),
        );
        let x: Vec<Vec<f64>> = pick
            .iter()
            .map(|&i| matrix.rows[i].values().to_vec())
            .collect();
        let emb = mds_embed(
            &euclidean_dissimilarity(&x),
            &cfg.analyze.mds,
            seed_for(cfg, Stage::Embed, &[1]),
        )?;
        let dims = cfg.analyze.mds.dims;
        let mut header = vec!["cell_id".to_string(), "group".to_string()];
        header.extend((0..dims).map(|d| format!("x{d}")));
        let rows = pick
            .iter()
            .zip(&emb.points)
            .map(|(&i, p)| {
                let r = &matrix.rows[i];
                let mut v = vec![r.cell_id.clone(), r.group.to_string()];
                v.extend(p.iter().map(|c| c.to_string()));
                v
            })
            .collect();
        write_csv(&dir.join("embedding.csv"), &header, rows)?;
        write_json(
            &dir.join("mds.json"),
            &json!({
                "n_points": pick.len(),
                "n_retained": matrix.len(),
                "stress": emb.stress,
                "iterations_run": emb.iterations_run,
                "stress_history": emb.stress_history,
            }),
        )?;
        let picked: Vec<Group> = pick.iter().map(|&i| groups[i]).collect();
        save_rgb_png(
            &dir.join("scatter.png"),
            &scatter_png(&emb.points, &picked, SCATTER_SIZE),
        )?;
        log::info!("embed: {} points, stress {:.4e}", pick.len(), emb.stress);
        Ok(())
    })
}

pub(crate) fn cluster(opts: &RunOptions) -> StageResult<StageOutcome> {
    let cfg = &opts.config;
    let layout = opts.layout();
    let path = opts.input.clone().unwrap_or_else(|| layout.features_csv());
    let retained = layout.retained_csv();
    let rows = read_features(&path)?;
    let ids = read_ids(&retained)?;
    cached(Stage::Cluster, opts, &[path, retained], |dir| {
        let matrix = retained_matrix(rows, &ids)?;
        let models = Group::ALL
            .iter()
            .filter(|g| matrix.rows.iter().any(|r| r.group == **g))
            .map(|&g| {
                cluster_group(
                    &matrix,
                    g,
                    &cfg.analyze.elbow,
                    seed_for(cfg, Stage::Cluster, &[]),
                )
            })
            .collect::<Result<Vec<ClusterModel>, _>>()?;
        let by_group: HashMap<Group, &ClusterModel> = models.iter().map(|m| (m.group, m)).collect();
        let rows = matrix
            .rows
            .iter()
            .map(|r| {
                let c = by_group[&r.group].assignments[&r.cell_id];
                vec![r.cell_id.clone(), r.group.to_string(), c.to_string()]
            })
            .collect();
        let header = ["cell_id", "group", "cluster"].map(String::from);
        write_csv(&dir.join("clusters.csv"), &header, rows)?;
        let curves: BTreeMap<String, _> = models
            .iter()
            .map(|m| {
                (
                    m.group.to_string(),
                    json!({ "k": m.k, "weak_elbow": m.weak_elbow, "sse_curve": m.sse_curve }),
                )
            })
            .collect();
        write_json(&dir.join("sse_curve.json"), &curves)?;
        write_json(&dir.join("cluster_models.json"), &models)?;
        for m in &models {
            let weak = if m.weak_elbow { " (weak elbow)" } else { "" };
            log::info!("cluster: {} k = {}{weak}", m.group, m.k);
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct PanelRecord<'a> {
    group: Group,
    cluster: usize,
    file: String,
    crop_size: (u32, u32),
    padded: bool,
    cell_ids: &'a [String],
    distances: &'a [f64],
}

pub(crate) fn panel(opts: &RunOptions) -> StageResult<StageOutcome> {
    let cfg = &opts.config;
    let layout = opts.layout();
    let models_path = opts
        .input
        .clone()
        .unwrap_or_else(|| layout.cluster_models());
    let features_path = layout.features_csv();
    let seg_dir = layout.dir(Stage::Segment);
    require_file(&models_path, "cluster models")?;
    let models: Vec<ClusterModel> = serde_json::from_slice(
        &std::fs::read(&models_path)
            .map_err(|e| StageError::Input(format!("{}: {e}", models_path.display())))?,
    )
    .map_err(|e| StageError::Input(format!("{}: {e}", models_path.display())))?;
    let rows = read_features(&features_path)?;
    let manifest = read_manifest(&seg_dir.join("manifest.csv"))?;
    let mut inputs = vec![models_path, features_path, seg_dir.join("manifest.csv")];
    for e in &manifest.entries {
        inputs.push(e.path.clone());
        inputs.push(label_path(&seg_dir, &e.id));
    }
    cached(Stage::Panel, opts, &inputs, |dir| {
        let assigned: HashSet<&str> = models
            .iter()
            .flat_map(|m| m.assignments.keys().map(String::as_str))
            .collect();
        let wanted_images: HashSet<&str> = rows
            .iter()
            .filter(|r| assigned.contains(r.cell_id.as_str()))
            .map(|r| r.image_id.as_str())
            .collect();
        let loaded = manifest
            .entries
            .par_iter()
            .filter(|e| wanted_images.contains(e.id.as_str()))
            .map(|e| load_cells(&seg_dir, e))
            .collect::<StageResult<Vec<_>>>()?;
        let mut images = HashMap::new();
        let mut cells = HashMap::new();
        for (img, cs) in loaded {
            for c in cs {
                if assigned.contains(c.cell_id.as_str()) {
                    cells.insert(c.cell_id.clone(), c);
                }
            }
            images.insert(img.id.clone(), img);
        }
        let matrix = normalized(rows)?;
        let mut records = Vec::new();
        let mut panels = Vec::new();
        for m in &models {
            panels.extend(retrieve_representatives(
                m,
                &matrix,
                &cells,
                &images,
                &cfg.analyze.panel,
            )?);
        }
        for p in &panels {
            let file = format!("panel_{}_{}.png", p.group, p.cluster);
            save_rgb_png(&dir.join(&file), &p.mosaic)?;
            records.push(PanelRecord {
                group: p.group,
                cluster: p.cluster,
                file,
                crop_size: p.crop_size,
                padded: p.padded,
                cell_ids: &p.cell_ids,
                distances: &p.distances,
            });
        }
        write_json(&dir.join("panels.json"), &records)?;
        log::info!("panel: {} panels", panels.len());
        Ok(())
    })
}

pub(crate) fn pipeline(opts: &RunOptions) -> StageResult<Vec<StageOutcome>> {
    let mut done = Vec::new();
    if opts.input.is_none() {
        done.push(synth(opts)?);
    }
    done.push(segment(opts)?);
    let rest = RunOptions {
        input: None,
        ..opts.clone()
    };
    done.push(features(&rest)?);
    done.push(prune(&rest)?);
    done.push(embed(&rest)?);
    done.push(cluster(&rest)?);
    done.push(panel(&rest)?);
    Ok(done)
}
