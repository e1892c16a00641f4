use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use vqarank::checks::{gradcheck_architecture, ARCHITECTURES};
use vqarank::data::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use vqarank::data::dataset::Dataset;
use vqarank::data::features::{fnv1a64, read_features, write_features};
use vqarank::data::manifest::Split;
use vqarank::data::synth::generate_synthetic_world;
use vqarank::eval::{evaluate as eval_report, RetrievalReport, ScoreMatrix};
use vqarank::grounding::QaBank;
use vqarank::heads::{HeadKind, VqaHead};
use vqarank::numcore::rng::{derive_seed, rng};
use vqarank::numcore::{GradCheckConfig, Matrix, Mode};
use vqarank::pipeline::{self, streams};
use vqarank::qa_select::{select_informative_qa, PipelinePredictor, SelectConfig};
use vqarank::ranking::{
    fit_score_fusion_weights, train_ranker as fit_ranker, FusionMode, RankTracePoint, Ranker, RankingSplit, ScoreFusionModel, Scorer,
};

use crate::config::{data_dir, CliConfig};
use crate::{
    Common, EvaluateArgs, ExtractArgs, FitAlphaBetaArgs, GenSynthArgs, GradcheckArgs, RankerMode, SelectQaArgs, TrainHeadArgs,
    TrainRankerArgs,
};

const BANK_FILE: &str = "bank.json";
const U_IMAGES_FILE: &str = "u_images.mmft";
const U_CAPTIONS_FILE: &str = "u_captions.mmft";
const GROUNDING_FILE: &str = "grounding.json";

struct Ctx {
    command: &'static str,
    cfg: CliConfig,
    data: PathBuf,
    out: PathBuf,
}

impl Ctx {
    fn new(command: &'static str, common: &Common) -> Result<Self> {
        let mut cfg = CliConfig::load(common.config.as_deref())?;
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        let data = data_dir(common.data_dir.as_deref());
        let out = common.out.clone().unwrap_or_else(|| data.clone());
        Ok(Self { command, cfg, data, out })
    }

    fn seed(&self, stream: u64) -> u64 {
        derive_seed(self.cfg.seed, stream)
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("cannot create {}", self.out.display()))
    }

    fn dataset(&self) -> Result<Dataset> {
        Dataset::load(&self.data).map_err(|e| anyhow!("cannot load dataset: {e}"))
    }

    /// Reproducibility record: command, effective config, seed, versions,
    /// and the non-path options of the run.
    fn record(&self, options: Value) -> Result<()> {
        let rec = json!({
            "command": self.command,
            "seed": self.cfg.seed,
            "versions": {
                "vqarank-cli": env!("CARGO_PKG_VERSION"),
                "checkpoint_format": vqarank::data::checkpoint::VERSION,
                "feature_format": vqarank::data::features::VERSION,
            },
            "config": self.cfg,
            "options": options,
        });
        write_text(&self.out_path(&format!("run_{}.json", self.command)), &(pretty(&rec)? + "\n"))
    }
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn meta(section: &impl Serialize, seed: u64, iteration: u64) -> Result<CheckpointMeta> {
    Ok(CheckpointMeta {
        config: serde_json::to_value(section)?,
        seed,
        iteration,
    })
}

fn load_ranker(path: &Path) -> Result<Ranker> {
    Ok(load_checkpoint::<Ranker>(path)?.model)
}

fn load_head(path: &Path, kind: HeadKind) -> Result<VqaHead> {
    let head = load_checkpoint::<VqaHead>(path)?.model;
    if head.kind != kind {
        bail!("{}: expected a {kind:?} head, found {:?}", path.display(), head.kind);
    }
    Ok(head)
}

pub fn gen_synth(a: GenSynthArgs) -> Result<ExitCode> {
    let mut ctx = Ctx::new("gen-synth", &a.common)?;
    let world_seed = ctx.seed(streams::WORLD);
    let w = &mut ctx.cfg.world;
    w.n_facts = a.n_facts.unwrap_or(w.n_facts);
    w.n_train = a.n_train.unwrap_or(w.n_train);
    w.n_val = a.n_val.unwrap_or(w.n_val);
    w.n_test = a.n_test.unwrap_or(w.n_test);
    w.captions_per_image = a.captions_per_image.unwrap_or(w.captions_per_image);
    w.caption_omission_rate = a.omission_rate.unwrap_or(w.caption_omission_rate);
    w.noise_sigma = a.noise_sigma.unwrap_or(w.noise_sigma);
    w.seed = world_seed;
    // the dataset itself always goes to the data directory
    ctx.out = ctx.data.clone();
    ctx.ensure_out()?;
    let world = generate_synthetic_world(&ctx.cfg.world)?;
    world.write(&ctx.data)?;
    let m = &world.dataset.manifest;
    println!(
        "wrote {} images, {} captions, {} QA pairs to {}",
        m.images.len(),
        m.captions.len(),
        m.qas.len(),
        ctx.data.display()
    );
    ctx.record(json!({}))?;
    Ok(ExitCode::SUCCESS)
}

pub fn train_head(a: TrainHeadArgs, kind: HeadKind) -> Result<ExitCode> {
    let (command, stem, stream) = match kind {
        HeadKind::Image => ("train-vqa", "vqa_image", streams::IMAGE_HEAD),
        HeadKind::Caption => ("train-vqacap", "vqa_caption", streams::CAPTION_HEAD),
    };
    let mut ctx = Ctx::new(command, &a.common)?;
    let stage = match kind {
        HeadKind::Image => &mut ctx.cfg.image_head,
        HeadKind::Caption => &mut ctx.cfg.caption_head,
    };
    stage.iterations = a.iterations.unwrap_or(stage.iterations);
    stage.batch_size = a.batch_size.unwrap_or(stage.batch_size);
    stage.learning_rate = a.learning_rate.unwrap_or(stage.learning_rate);
    stage.multimodal_dim = a.multimodal_dim.unwrap_or(stage.multimodal_dim);
    stage.hidden_keep_prob = a.keep_prob.unwrap_or(stage.hidden_keep_prob);
    let stage = stage.clone();
    let ds = ctx.dataset()?;
    ctx.ensure_out()?;
    let seed = ctx.seed(stream);
    let trained = pipeline::train_head(&ds, kind, &stage, seed)?;
    save_checkpoint(
        ctx.out_path(&format!("{stem}.ckpt")),
        &trained.head,
        &meta(&stage, seed, stage.iterations)?,
    )?;
    let mut trace = String::from("iteration,loss\n");
    for p in &trained.trace {
        writeln!(trace, "{},{:.9}", p.iteration, p.loss)?;
    }
    write_text(&ctx.out_path(&format!("{stem}_trace.csv")), &trace)?;
    write_text(
        &ctx.out_path(&format!("{stem}_metrics.txt")),
        &format!("heldout_accuracy={:.6}\n", trained.heldout_accuracy),
    )?;
    println!("{stem}: held-out accuracy {:.4}", trained.heldout_accuracy);
    ctx.record(json!({ "kind": kind }))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize, serde::Deserialize)]
struct GroundingSidecar {
    bank_size: usize,
    bank_hash: String,
    u_images_hash: String,
    u_captions_hash: String,
}

fn hex(h: u64) -> String {
    format!("{h:016x}")
}

pub fn extract_grounding(a: ExtractArgs) -> Result<ExitCode> {
    let mut ctx = Ctx::new("extract-grounding", &a.common)?;
    ctx.cfg.bank.per_image = a.per_image.unwrap_or(ctx.cfg.bank.per_image);
    ctx.cfg.bank.num_images = a.num_images.unwrap_or(ctx.cfg.bank.num_images);
    let ds = ctx.dataset()?;
    let img_path = a.image_head.unwrap_or_else(|| ctx.out_path("vqa_image.ckpt"));
    let cap_path = a.caption_head.unwrap_or_else(|| ctx.out_path("vqa_caption.ckpt"));
    let img = load_head(&img_path, HeadKind::Image)?;
    let cap = load_head(&cap_path, HeadKind::Caption)?;
    ctx.ensure_out()?;
    let bank = pipeline::build_bank(&ds, &ctx.cfg.bank, ctx.seed(streams::BANK))?;
    let u_img = pipeline::extract_u(&img, &bank, &ds.images)?;
    let u_cap = pipeline::extract_u(&cap, &bank, &ds.bow)?;
    write_text(&ctx.out_path(BANK_FILE), &(pretty(&bank)? + "\n"))?;
    let ui_path = ctx.out_path(U_IMAGES_FILE);
    let uc_path = ctx.out_path(U_CAPTIONS_FILE);
    write_features(&ui_path, &u_img.transpose())?;
    write_features(&uc_path, &u_cap.transpose())?;
    let side = GroundingSidecar {
        bank_size: bank.len(),
        bank_hash: hex(bank.content_hash()),
        u_images_hash: hex(fnv1a64(&std::fs::read(&ui_path)?)),
        u_captions_hash: hex(fnv1a64(&std::fs::read(&uc_path)?)),
    };
    write_text(&ctx.out_path(GROUNDING_FILE), &(pretty(&side)? + "\n"))?;
    println!(
        "bank of {} QA pairs; u vectors for {} images and {} captions",
        bank.len(),
        u_img.cols(),
        u_cap.cols()
    );
    ctx.record(json!({}))?;
    Ok(ExitCode::SUCCESS)
}

/// Grounded features written by `extract-grounding`, checked against the sidecar.
fn load_grounding(ctx: &Ctx) -> Result<(Matrix, Matrix)> {
    let side_path = ctx.out_path(GROUNDING_FILE);
    let side: GroundingSidecar = serde_json::from_str(
        &std::fs::read_to_string(&side_path)
            .with_context(|| format!("cannot read {} (run extract-grounding first)", side_path.display()))?,
    )
    .with_context(|| format!("invalid {}", side_path.display()))?;
    let load = |name: &str, hash: &str| -> Result<Matrix> {
        let path = ctx.out_path(name);
        let bytes = std::fs::read(&path).with_context(|| format!("cannot read {}", path.display()))?;
        if hex(fnv1a64(&bytes)) != hash {
            bail!("{} does not match {}", path.display(), side_path.display());
        }
        let u = read_features(&path)?.transpose();
        if u.rows() != side.bank_size {
            bail!("{}: {} facts, bank has {}", path.display(), u.rows(), side.bank_size);
        }
        Ok(u)
    };
    let u_img = load(U_IMAGES_FILE, &side.u_images_hash)?;
    let u_cap = load(U_CAPTIONS_FILE, &side.u_captions_hash)?;
    Ok((u_img, u_cap))
}

fn load_bank(ctx: &Ctx) -> Result<QaBank> {
    let path = ctx.out_path(BANK_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid {}", path.display()))
}

fn splits(ctx: &Ctx, ds: &Dataset, grounded: bool) -> Result<pipeline::Splits> {
    let u = if grounded { Some(load_grounding(ctx)?) } else { None };
    Ok(pipeline::ranking_splits(ds, u.as_ref().map(|u| &u.0), u.as_ref().map(|u| &u.1))?)
}

fn trace_csv(trace: &[RankTracePoint]) -> String {
    let mut s = String::from("iteration,loss,val_caption_r1,val_image_r1\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for p in trace {
        let _ = writeln!(s, "{},{:.9},{},{}", p.iteration, p.loss, opt(p.val_caption_r1), opt(p.val_image_r1));
    }
    s
}

fn ranker_name(mode: RankerMode, fusion: FusionMode) -> String {
    match mode {
        RankerMode::Agnostic => "agnostic".into(),
        RankerMode::Score => "score_fusion".into(),
        RankerMode::Rep => pipeline::rep_model_name(fusion),
    }
}

pub fn train_ranker(a: TrainRankerArgs) -> Result<ExitCode> {
    let mut ctx = Ctx::new("train-ranker", &a.common)?;
    let r = &mut ctx.cfg.ranker;
    r.iterations = a.iterations.unwrap_or(r.iterations);
    r.batch_size = a.batch_size.unwrap_or(r.batch_size);
    r.keep_prob = a.keep_prob.unwrap_or(r.keep_prob);
    if let Some(lr) = a.learning_rate {
        match a.mode {
            RankerMode::Agnostic => r.agnostic_learning_rate = lr,
            RankerMode::Score => r.score_fusion_learning_rate = lr,
            RankerMode::Rep => r.rep_fusion_learning_rate = lr,
        }
    }
    let rcfg = r.clone();
    let seed = ctx.cfg.seed;
    let ds = ctx.dataset()?;
    let grounded = a.mode != RankerMode::Agnostic;
    let sp = splits(&ctx, &ds, grounded)?;
    ctx.ensure_out()?;
    let agnostic = || -> Result<_> {
        let path = a.agnostic.clone().unwrap_or_else(|| ctx.out_path("ranker_agnostic.ckpt"));
        match load_ranker(&path)? {
            Ranker::Agnostic(m) => Ok(m),
            other => bail!("{}: expected an agnostic ranker, found {}", path.display(), other.kind()),
        }
    };
    let bank_len = sp.train.images.u.as_ref().map_or(0, Matrix::rows);
    let (model, trace, best) = match a.mode {
        RankerMode::Agnostic => {
            let m = pipeline::new_agnostic(ds.captions.rows(), ds.images.rows(), seed);
            let o = fit_ranker(m, &sp.train, Some(&sp.val), &pipeline::agnostic_config(&rcfg, seed))?;
            (Ranker::Agnostic(o.model), o.trace, o.best_iteration)
        }
        RankerMode::Score => {
            let s = derive_seed(seed, streams::SCORE_FUSION);
            let m = ScoreFusionModel::new(
                agnostic()?,
                bank_len,
                bank_len,
                rcfg.v_dim,
                rcfg.keep_prob,
                &mut rng(derive_seed(s, 1)),
            );
            let o = fit_ranker(m, &sp.train, Some(&sp.val), &rcfg.train_config(rcfg.score_fusion_learning_rate, s))?;
            (Ranker::ScoreFusion(o.model), o.trace, o.best_iteration)
        }
        RankerMode::Rep => {
            let o = pipeline::train_rep_fusion_outcome(&agnostic()?, a.fusion_mode, bank_len, &sp, &rcfg, seed)?;
            (Ranker::RepFusion(o.model), o.trace, o.best_iteration)
        }
    };
    let name = ranker_name(a.mode, a.fusion_mode);
    save_checkpoint(ctx.out_path(&format!("ranker_{name}.ckpt")), &model, &meta(&rcfg, seed, best)?)?;
    write_text(&ctx.out_path(&format!("ranker_{name}_trace.csv")), &trace_csv(&trace))?;
    println!("ranker_{name}: best validation checkpoint at iteration {best}");
    ctx.record(json!({ "mode": name }))?;
    Ok(ExitCode::SUCCESS)
}

pub fn fit_alphabeta(a: FitAlphaBetaArgs) -> Result<ExitCode> {
    let ctx = Ctx::new("fit-alphabeta", &a.common)?;
    let path = a.ranker.unwrap_or_else(|| ctx.out_path("ranker_score_fusion.ckpt"));
    let ck = load_checkpoint::<Ranker>(&path)?;
    let Ranker::ScoreFusion(mut model) = ck.model else {
        bail!("{}: expected a score_fusion ranker, found {}", path.display(), ck.kind);
    };
    let ds = ctx.dataset()?;
    let sp = splits(&ctx, &ds, true)?;
    ctx.ensure_out()?;
    let fit = fit_score_fusion_weights(&mut model, &sp.val)?;
    save_checkpoint(&path, &Ranker::ScoreFusion(model), &ck.meta)?;
    write_text(&ctx.out_path("alphabeta.json"), &(pretty(&fit)? + "\n"))?;
    println!(
        "alpha {:.2}, beta {:.2}, validation mean R@1 {:.4}",
        fit.alpha, fit.beta, fit.mean_r1
    );
    ctx.record(json!({}))?;
    Ok(ExitCode::SUCCESS)
}

fn split_of(sp: pipeline::Splits, split: Split) -> RankingSplit {
    match split {
        Split::Train => sp.train,
        Split::Val => sp.val,
        Split::Test => sp.test,
    }
}

fn oracle_report(split: &RankingSplit) -> Result<RetrievalReport> {
    let mut s = Matrix::zeros(split.n_images(), split.n_captions());
    for (c, &i) in split.caption_image.iter().enumerate() {
        s[(i, c)] = 1.0;
    }
    let sm = ScoreMatrix::new(s, split.image_ids.clone(), split.caption_ids.clone(), split.caption_image.clone())?;
    Ok(RetrievalReport::from_scores(&sm))
}

pub fn evaluate(a: EvaluateArgs) -> Result<ExitCode> {
    let ctx = Ctx::new("evaluate", &a.common)?;
    let ds = ctx.dataset()?;
    let (name, report) = if a.ranker == "oracle" {
        let sp = ds.ranking_split(a.split, None, None)?;
        ("oracle".to_string(), oracle_report(&sp)?)
    } else {
        let path = PathBuf::from(&a.ranker);
        let model = load_ranker(&path)?;
        let sp = split_of(splits(&ctx, &ds, model.needs_grounding())?, a.split);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("ranker").to_string();
        (stem, eval_report(&model, &sp)?)
    };
    ctx.ensure_out()?;
    write_text(&ctx.out_path(&format!("metrics_{name}_{}.txt", a.split)), &report.to_kv())?;
    print!("{}", report.to_table());
    ctx.record(json!({ "ranker": name, "split": a.split }))?;
    Ok(ExitCode::SUCCESS)
}

pub fn select_qa(a: SelectQaArgs) -> Result<ExitCode> {
    let mut ctx = Ctx::new("select-qa", &a.common)?;
    let sel = &mut ctx.cfg.select;
    sel.top_k = a.top_k.unwrap_or(sel.top_k);
    sel.n_samples = a.n_samples.unwrap_or(sel.n_samples);
    sel.marginals = a.marginals.unwrap_or(sel.marginals);
    let sel = sel.clone();
    let ds = ctx.dataset()?;
    let ranker = load_ranker(&a.ranker)?;
    let head_path = a.image_head.unwrap_or_else(|| ctx.out_path("vqa_image.ckpt"));
    let head = load_head(&head_path, HeadKind::Image)?;
    let bank = load_bank(&ctx)?;
    let rec = ds
        .manifest
        .images
        .iter()
        .find(|r| r.id == a.image)
        .ok_or_else(|| anyhow!("unknown image id {:?}", a.image))?;
    let sp = split_of(splits(&ctx, &ds, ranker.needs_grounding())?, rec.split);
    let i = sp.image_ids.iter().position(|id| *id == a.image).expect("image is in its split");
    let scores = ranker.score_matrix(&sp.images.select(&[i]), &sp.captions, &Mode::Infer)?;
    let mut order: Vec<usize> = (0..sp.n_captions()).collect();
    order.sort_by(|&x, &y| scores[(0, y)].total_cmp(&scores[(0, x)]).then(x.cmp(&y)));
    order.truncate(sel.top_k.max(1));
    let candidates = sp.captions.select(&order);
    let grounding = ranker.needs_grounding().then_some(&bank);
    let pred = PipelinePredictor::new(&head, &bank, grounding, &ranker, &sp.images.x.col(i), &candidates)?;
    let cfg = SelectConfig {
        n_samples: sel.n_samples,
        seed: ctx.seed(0x5e1ec7),
        marginals: sel.marginals,
    };
    let ranked = select_informative_qa(&pred, &cfg)?;
    let mut csv = String::from("rank,qa_index,question_id,source_image_id,answer,mi_nats\n");
    for (r, m) in ranked.iter().enumerate() {
        let p = &bank.pairs[m.qa_index];
        let answer = ds
            .manifest
            .answers
            .get(&p.answer_index)
            .cloned()
            .unwrap_or_else(|| p.answer_index.to_string());
        writeln!(
            csv,
            "{},{},{},{},{},{:.9}",
            r + 1,
            m.qa_index,
            p.question_id,
            p.source_image_id,
            answer,
            m.mi_nats
        )?;
    }
    ctx.ensure_out()?;
    write_text(&ctx.out_path(&format!("select_{}.csv", a.image)), &csv)?;
    println!(
        "candidates: {}",
        order.iter().map(|&c| sp.caption_ids[c].as_str()).collect::<Vec<_>>().join(" ")
    );
    for line in csv.lines().take(6) {
        println!("{line}");
    }
    ctx.record(json!({ "image": a.image, "ranker_kind": ranker.kind() }))?;
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let ctx = Ctx::new("gradcheck", &a.common)?;
    let archs: Vec<&str> = if a.arch == "all" {
        ARCHITECTURES.to_vec()
    } else {
        vec![a.arch.as_str()]
    };
    let cfg = GradCheckConfig {
        samples_per_layer: a.samples,
        seed: ctx.cfg.seed,
        ..Default::default()
    };
    let mut text = String::new();
    let mut ok = true;
    for arch in archs {
        let report = gradcheck_architecture(arch, ctx.cfg.seed, &cfg)?;
        ok &= report.passed;
        writeln!(text, "{arch}\n{report}")?;
    }
    print!("{text}");
    ctx.ensure_out()?;
    write_text(&ctx.out_path("gradcheck.txt"), &text)?;
    ctx.record(json!({ "arch": a.arch, "samples": a.samples }))?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
