use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use scenectx::context::{assign_partitions, DEFAULT_SHELL_BOUNDARY};
use scenectx::contrastive::{train_embeddings, write_curve_csv, ScenePair};
use scenectx::harness::metrics::{instance_map50, miou, GtInstances};
use scenectx::harness::report::write_csv;
use scenectx::harness::{
    generate_synthetic_scene, instance_features, sweep_partitions, synthetic_dataset, write_sweep_csv, EvalReport,
    RunConfig, SceneSpec,
};
use scenectx::instance::{bfs_cluster, score_instances, semantic_argmax, shift_points, OffsetField};
use scenectx::io::{self, PlyEncoding};
use scenectx::labeling::{expand_labels, select_points, LabelBudget};
use scenectx::mining::{mine_pairs, prepare_frames, subsample_frames};
use scenectx::{FeatureMatrix, PointCloud, Pose, IGNORE_LABEL};

use crate::{Cli, Command, Task};

const PAIRS_LIST: &str = "pairs.txt";

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Generate {
            out,
            objects,
            seed,
            density,
            overlap,
            noise,
            classes,
            feature_dim,
        } => {
            let spec = SceneSpec {
                num_objects: objects,
                seed,
                density,
                view_overlap: overlap,
                noise,
                num_classes: classes,
                ..SceneSpec::default()
            };
            generate(&spec, feature_dim, &out)
        }
        Command::MinePairs {
            frames,
            stride,
            radius,
            min_overlap,
            voxel,
            out,
        } => {
            apply(&mut cfg, "mine.stride", stride)?;
            apply(&mut cfg, "mine.match_radius", radius)?;
            apply(&mut cfg, "mine.min_overlap", min_overlap)?;
            apply(&mut cfg, "mine.voxel_size", voxel)?;
            cfg.validate()?;
            mine(&cfg, &frames, &out)
        }
        Command::Partition {
            cloud,
            candidates,
            anchors,
            sectors,
            shells,
            boundary,
            out,
        } => {
            apply_partition(&mut cfg, sectors, shells, boundary)?;
            cfg.validate()?;
            partition(&cfg, &cloud, candidates.as_deref(), &anchors, &out)
        }
        Command::PretrainToy {
            pairs,
            sectors,
            shells,
            boundary,
            tau,
            n,
            steps,
            lr,
            dim,
            seed,
            out,
        } => {
            apply_partition(&mut cfg, sectors, shells, boundary)?;
            apply(&mut cfg, "loss.tau", tau)?;
            apply(&mut cfg, "loss.num_sampled_matches", n)?;
            apply(&mut cfg, "train.steps", steps)?;
            apply(&mut cfg, "train.lr", lr)?;
            apply(&mut cfg, "train.dim", dim)?;
            apply(&mut cfg, "train.seed", seed)?;
            cfg.validate()?;
            pretrain(&cfg, &pairs, &out)
        }
        Command::SelectPoints {
            scene,
            features,
            budget,
            strategy,
            seed,
            iterations,
            out,
            mask,
        } => {
            apply(&mut cfg, "select.budget", budget)?;
            apply(&mut cfg, "select.strategy", strategy)?;
            apply(&mut cfg, "select.seed", seed)?;
            apply(&mut cfg, "select.iterations", iterations)?;
            cfg.validate()?;
            select(&cfg, &scene, features.as_deref(), &out, mask.as_deref())
        }
        Command::ClusterInstances {
            cloud,
            offsets,
            scores,
            radius,
            min_size,
            out,
        } => {
            apply(&mut cfg, "cluster.radius", radius)?;
            apply(&mut cfg, "cluster.min_size", min_size)?;
            cfg.validate()?;
            cluster(&cfg, &cloud, &offsets, &scores, &out)
        }
        Command::Evaluate {
            task,
            pred,
            gt,
            num_classes,
            seed,
            report_dir,
        } => evaluate(&cfg, task, &pred, &gt, num_classes, seed, report_dir.as_deref()),
        Command::Sweep {
            points,
            partitions,
            seed,
            steps,
            scene_pairs,
            out,
        } => {
            apply(&mut cfg, "train.seed", seed)?;
            apply(&mut cfg, "train.steps", steps)?;
            cfg.validate()?;
            sweep(&cfg, &points, &partitions, scene_pairs, out.as_deref())
        }
    }
}

fn apply<T: ToString>(cfg: &mut RunConfig, key: &str, value: Option<T>) -> Result<()> {
    if let Some(v) = value {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

/// Shell counts given without boundaries get boundaries at multiples of the default spacing.
fn apply_partition(
    cfg: &mut RunConfig,
    sectors: Option<usize>,
    shells: Option<usize>,
    boundary: Option<String>,
) -> Result<()> {
    apply(cfg, "partition.angular_sectors", sectors)?;
    apply(cfg, "partition.radial_shells", shells)?;
    match boundary {
        Some(b) => cfg.set("partition.shell_boundaries_m", &b)?,
        None => {
            let p = &mut cfg.loss.partition;
            if p.shell_boundaries_m.len() + 1 != p.radial_shells {
                p.shell_boundaries_m = (1..p.radial_shells).map(|k| k as f64 * DEFAULT_SHELL_BOUNDARY).collect();
            }
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn generate(spec: &SceneSpec, feature_dim: usize, out: &Path) -> Result<()> {
    let scene = generate_synthetic_scene(spec)?;
    let frames = out.join("frames");
    create_dir(&frames)?;
    for k in 0..2 {
        io::write_ply(frames.join(format!("{k}.ply")), &scene.views[k], PlyEncoding::BinaryLittleEndian)?;
        io::write_pose(frames.join(format!("{k}.pose")), &scene.poses[k])?;
    }
    io::write_ply(out.join("scene.ply"), &scene.world, PlyEncoding::BinaryLittleEndian)?;
    io::write_offsets(out.join("scene.offs"), scene.world_offsets.as_slice())?;
    let num_classes = spec.num_classes as usize + 1;
    let labels = scene.world.semantic_labels().expect("generated scenes are labelled");
    let mut one_hot = vec![0.0; labels.len() * num_classes];
    for (i, &l) in labels.iter().enumerate() {
        one_hot[i * num_classes + l as usize] = 1.0;
    }
    io::write_features(
        out.join("scene.scores.ftrs"),
        &FeatureMatrix::new(labels.len(), num_classes, one_hot)?,
    )?;
    io::write_features(
        out.join("scene.features.ftrs"),
        &instance_features(&scene.world, feature_dim, 0.1, spec.seed)?,
    )?;
    println!(
        "{} points, {} + {} view points, {} ground-truth matches",
        scene.world.len(),
        scene.views[0].len(),
        scene.views[1].len(),
        scene.correspondences.len()
    );
    Ok(())
}

/// Frame ids of `<id>.ply` files that have a matching `<id>.pose`, numerically sorted
/// when every id is an integer.
fn frame_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "ply") {
            let id = path.file_stem().unwrap().to_string_lossy().into_owned();
            if dir.join(format!("{id}.pose")).exists() {
                ids.push(id);
            } else {
                log::warn!("skipping {} without a pose file", path.display());
            }
        }
    }
    if ids.iter().all(|id| id.parse::<u64>().is_ok()) {
        ids.sort_by_key(|id| id.parse::<u64>().unwrap());
    } else {
        ids.sort();
    }
    Ok(ids)
}

fn mine(cfg: &RunConfig, frames_dir: &Path, out: &Path) -> Result<()> {
    let ids = subsample_frames(&frame_ids(frames_dir)?, cfg.mine.stride)?;
    if ids.len() < 2 {
        bail!("need at least two frames after subsampling, found {}", ids.len());
    }
    let frames = ids
        .iter()
        .map(|id| {
            Ok((
                io::read_ply(frames_dir.join(format!("{id}.ply")))?,
                io::read_pose(frames_dir.join(format!("{id}.pose")))?,
            ))
        })
        .collect::<Result<Vec<(PointCloud, Pose)>>>()?;
    let frames = prepare_frames(&frames, cfg.mine.voxel_size)?;
    let kept = mine_pairs(&frames, cfg.mine.match_radius, cfg.mine.min_overlap)?;

    create_dir(out)?;
    for (id, (cloud, pose)) in ids.iter().zip(&frames) {
        io::write_ply(out.join(format!("{id}.ply")), cloud, PlyEncoding::BinaryLittleEndian)?;
        io::write_pose(out.join(format!("{id}.pose")), pose)?;
    }
    let mut list = String::from("# frame_a frame_b overlap overlap_ab overlap_ba\n");
    for (pair, set) in &kept {
        let (a, b) = (&ids[pair.frame_a], &ids[pair.frame_b]);
        io::write_correspondences(out.join(format!("{a}_{b}.corr")), set, pair.overlap_ratio)?;
        io::write_pairs(out.join(format!("{a}_{b}.corr.bin")), &set.pairs)?;
        list.push_str(&format!(
            "{a} {b} {} {} {}\n",
            pair.overlap_ratio, pair.overlap_ab, pair.overlap_ba
        ));
    }
    fs::write(out.join(PAIRS_LIST), list)?;
    println!("kept {} of {} candidate pairs", kept.len(), ids.len() * (ids.len() - 1) / 2);
    Ok(())
}

fn partition(cfg: &RunConfig, cloud: &Path, candidates: Option<&Path>, anchors: &[usize], out: &Path) -> Result<()> {
    let anchor_cloud = io::read_ply(cloud)?;
    let candidate_cloud = match candidates {
        Some(p) => io::read_ply(p)?,
        None => anchor_cloud.clone(),
    };
    let assignments = anchors
        .iter()
        .map(|&a| assign_partitions(&cfg.loss.partition, a, &anchor_cloud, &candidate_cloud))
        .collect::<scenectx::Result<Vec<_>>>()?;
    let doc = serde_json::json!({
        "partition": cfg.loss.partition,
        "assignments": assignments,
    });
    fs::write(out, serde_json::to_string(&doc)?).with_context(|| format!("cannot write {}", out.display()))?;
    Ok(())
}

fn read_pairs_list(dir: &Path) -> Result<Vec<(String, String)>> {
    let path = dir.join(PAIRS_LIST);
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut pairs = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let mut it = line.split_whitespace();
        match (it.next(), it.next()) {
            (Some(a), Some(b)) => pairs.push((a.to_string(), b.to_string())),
            _ => bail!("malformed line in {}: {line:?}", path.display()),
        }
    }
    Ok(pairs)
}

fn pretrain(cfg: &RunConfig, dir: &Path, out: &Path) -> Result<()> {
    let ids = read_pairs_list(dir)?;
    if ids.is_empty() {
        bail!("{} lists no frame pairs", dir.join(PAIRS_LIST).display());
    }
    let load = |id: &str| -> Result<PointCloud> {
        let cloud = io::read_ply(dir.join(format!("{id}.ply")))?;
        Ok(cloud.transform(&io::read_pose(dir.join(format!("{id}.pose")))?))
    };
    let pairs = ids
        .iter()
        .map(|(a, b)| {
            let (matches, _) = io::read_correspondences(dir.join(format!("{a}_{b}.corr")))?;
            Ok(ScenePair {
                anchors: load(a)?,
                candidates: load(b)?,
                matches,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let result = train_embeddings(&pairs, &cfg.loss, &cfg.train)?;
    create_dir(out)?;
    for ((a, b), (f1, f2)) in ids.iter().zip(&result.embeddings) {
        io::write_features(out.join(format!("{a}_{b}.{a}.ftrs")), f1)?;
        io::write_features(out.join(format!("{a}_{b}.{b}.ftrs")), f2)?;
    }
    let curve = out.join("loss.csv");
    write_curve_csv(std::io::BufWriter::new(fs::File::create(&curve)?), &result.curve)?;
    if let (Some(first), Some(last)) = (result.curve.first(), result.curve.last()) {
        println!("loss {:.4} -> {:.4} over {} steps", first.total, last.total, result.curve.len());
    }
    Ok(())
}

fn select(cfg: &RunConfig, scene: &Path, features: Option<&Path>, out: &Path, mask: Option<&Path>) -> Result<()> {
    let cloud = io::read_ply(scene)?;
    let feats = features.map(io::read_features).transpose()?;
    let s = &cfg.select;
    let budget = LabelBudget::new(s.budget)?;
    let sel = select_points(&cloud, feats.as_ref(), budget, s.strategy, s.seed, &s.options)?;
    io::write_selection(out, &sel, s.budget, s.seed)?;
    if let Some(mask_path) = mask {
        io::write_mask(mask_path, &expand_labels(&cloud, &sel)?)?;
    }
    Ok(())
}

fn cluster(cfg: &RunConfig, cloud: &Path, offsets: &Path, scores: &Path, out: &Path) -> Result<()> {
    let cloud = io::read_ply(cloud)?;
    let offsets = OffsetField::new(io::read_offsets(offsets)?)?;
    let scores = io::read_features(scores)?;
    let shifted = shift_points(&cloud, &offsets)?;
    let labels = semantic_argmax(&scores);
    let pred = bfs_cluster(&shifted, &labels, cfg.cluster.radius, cfg.cluster.min_size)?;
    let pred = score_instances(&pred, &scores)?;
    io::write_prediction(out, &pred)?;
    println!("{} instances", pred.instances.len());
    Ok(())
}

/// Semantic predictions come from a labelled PLY or a MASK file.
fn read_semantic(path: &Path) -> Result<Vec<u32>> {
    if path.extension().is_some_and(|e| e == "ply") {
        let cloud = io::read_ply(path)?;
        match cloud.semantic_labels() {
            Some(l) => Ok(l.to_vec()),
            None => bail!("{} has no label property", path.display()),
        }
    } else {
        Ok(io::read_mask(path)?)
    }
}

fn evaluate(
    cfg: &RunConfig,
    task: Task,
    pred: &Path,
    gt: &Path,
    num_classes: Option<usize>,
    seed: u64,
    report_dir: Option<&Path>,
) -> Result<()> {
    let gt_cloud = io::read_ply(gt)?;
    let report = match task {
        Task::Sem => {
            let gt_labels = gt_cloud
                .semantic_labels()
                .with_context(|| format!("{} has no semantic labels", gt.display()))?;
            let classes = num_classes.unwrap_or_else(|| {
                gt_labels
                    .iter()
                    .filter(|&&l| l != IGNORE_LABEL)
                    .max()
                    .map_or(0, |&m| m as usize + 1)
            });
            let r = miou(&read_semantic(pred)?, gt_labels, classes, IGNORE_LABEL)?;
            let per_class = r.per_class.iter().enumerate().filter_map(|(c, v)| v.map(|v| (c as u32, v)));
            EvalReport::new("miou", r.miou, cfg.to_json(), seed)?.with_per_class(per_class)
        }
        Task::Ins => {
            let gt_inst = GtInstances::from_cloud(&gt_cloud)?;
            let r = instance_map50(&io::read_prediction(pred)?, &gt_inst)?;
            EvalReport::new("map50", r.map, cfg.to_json(), seed)?.with_per_class(r.per_class)
        }
    };
    println!("{} = {:.6}", report.metric, report.value);
    if let Some(dir) = report_dir {
        create_dir(dir)?;
        let csv = dir.join(format!("{}.csv", report.metric));
        write_csv(std::io::BufWriter::new(fs::File::create(&csv)?), std::slice::from_ref(&report))?;
        fs::write(dir.join(format!("{}.json", report.metric)), report.to_json()?)?;
    }
    Ok(())
}

fn sweep(cfg: &RunConfig, points: &[usize], partitions: &[usize], scene_pairs: usize, out: Option<&Path>) -> Result<()> {
    let data = synthetic_dataset(&SceneSpec::toy_dataset(cfg.train.seed), scene_pairs)?;
    let cells = sweep_partitions(points, partitions, &data, &cfg.loss, &cfg.train)?;
    match out {
        Some(path) => write_sweep_csv(std::io::BufWriter::new(fs::File::create(path)?), &cells)?,
        None => {
            let stdout = std::io::stdout();
            write_sweep_csv(stdout.lock(), &cells)?;
        }
    }
    std::io::stdout().flush()?;
    Ok(())
}
