//! Subcommand implementations. Each one reads the experiment file (and a
//! checkpoint where relevant) and writes CSV reports into the output
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use flowgan_core::evaluation::{
    ais_estimate, gmm_bandwidth_search, inception_score, kde_estimate, mode_score, spectral_report,
    train_surrogate_classifier, ClassifierConfig, GmmBaseline,
};
use flowgan_core::flow::build_flow;
use flowgan_core::io::Checkpoint;
use flowgan_core::rng::{self, Stream};
use flowgan_core::training::{nats_to_bits_per_dim, RunStatus, Trainer};
use flowgan_core::{Classifier, Dataset, ExperimentConfig, FlowModel, Tensor};
use rayon::prelude::*;

use crate::report::{num, opt, write_csv};

pub type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

/// Bootstrap resamples behind the AIS standard errors.
const AIS_BOOTSTRAP: usize = 200;

pub struct Context {
    pub config: ExperimentConfig,
    pub data: Dataset,
}

impl Context {
    pub fn load(config: &Path, out_dir: Option<PathBuf>, checkpoint: Option<PathBuf>) -> CliResult<Context> {
        let mut config = ExperimentConfig::load(config)?;
        if let Some(dir) = out_dir {
            config.out_dir = dir;
        }
        if checkpoint.is_some() {
            config.checkpoint = checkpoint;
        }
        fs::create_dir_all(&config.out_dir)?;
        let data = config.dataset()?;
        Ok(Context { config, data })
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    /// The flow stored in the configured checkpoint.
    pub fn model(&self) -> CliResult<FlowModel> {
        let path = self.config.checkpoint_path();
        let ckpt = Checkpoint::load(&path)?;
        let mut model = build_flow(&self.config.flow_spec(self.data.dim()), self.config.seed)?;
        ckpt.load_params("flow", &mut model)?;
        Ok(model)
    }

    /// Surrogate classifier for sample scores, when enabled and the data are
    /// labeled.
    pub fn classifier(&self) -> CliResult<Option<Classifier>> {
        if !self.config.classifier || self.data.num_classes.is_none() {
            return Ok(None);
        }
        let cfg = ClassifierConfig {
            steps: self.config.classifier_steps,
            ..ClassifierConfig::default()
        };
        Ok(Some(train_surrogate_classifier(&self.data, &cfg, self.config.seed)?))
    }

    fn mean_nll(&self, model: &FlowModel, x: &Tensor) -> CliResult<f64> {
        let ll = model.log_likelihood(x)?;
        Ok(-ll.data().iter().sum::<f64>() / ll.numel() as f64)
    }
}

pub fn train(ctx: &Context, resume: Option<&Path>) -> CliResult {
    let cfg = &ctx.config;
    let tc = cfg.train_config_for(ctx.data.dim())?;
    let classifier = ctx.classifier()?;
    let mut trainer = match resume {
        Some(path) => Trainer::resume(tc, &ctx.data, classifier.as_ref(), &Checkpoint::load(path)?)?,
        None => Trainer::new(tc, &ctx.data, classifier.as_ref())?,
    };
    let every = cfg.checkpoint_every.max(1);
    let mut last_good = trainer.checkpoint(&cfg.text);
    let status = loop {
        let next = (trainer.iteration() / every + 1) * every;
        let status = trainer.run_until(next)?;
        fs::write(ctx.out("metrics.csv"), trainer.log().to_csv())?;
        if status != RunStatus::Completed {
            last_good.save(&cfg.checkpoint_path())?;
            break status;
        }
        last_good = trainer.checkpoint(&cfg.text);
        last_good.save(&ctx.out(&format!("checkpoint_{:06}.ckpt", trainer.iteration())))?;
        if trainer.iteration() >= cfg.n_iters {
            last_good.save(&cfg.checkpoint_path())?;
            break status;
        }
    };
    match status {
        RunStatus::Completed => println!(
            "trained {} iterations; log {}",
            trainer.iteration(),
            ctx.out("metrics.csv").display()
        ),
        RunStatus::Diverged { iteration, reason } => {
            eprintln!(
                "warning: training halted at iteration {iteration}: {reason}; kept the state from iteration {}",
                last_good.iteration
            )
        }
    }
    Ok(())
}

pub fn eval_nll(ctx: &Context) -> CliResult {
    let model = ctx.model()?;
    let d = ctx.data.dim();
    let corr = ctx.data.scale_correction();
    let mut rows = Vec::new();
    for (name, split) in [
        ("train", &ctx.data.train),
        ("val", &ctx.data.val),
        ("test", &ctx.data.test),
    ] {
        if split.is_empty() {
            continue;
        }
        let nll = ctx.mean_nll(&model, &split.x)?;
        rows.push(vec![
            name.to_string(),
            num(nll),
            num(nats_to_bits_per_dim(nll, d, corr)),
        ]);
    }
    write_csv(&ctx.out("nll.csv"), &["split", "nll_nats", "bpd"], &rows)
}

pub fn eval_gmm(ctx: &Context) -> CliResult {
    let cfg = &ctx.config;
    let grid = cfg.bandwidth_grid();
    let search = gmm_bandwidth_search(&ctx.data.train.x, &ctx.data.val.x, &grid)?;
    let classifier = ctx.classifier()?;
    let p_star = ctx.data.label_distribution();
    let mut rows = Vec::with_capacity(grid.len());
    for (k, &(sigma, val_nll)) in search.curve.iter().enumerate() {
        let mode = match (&classifier, &p_star) {
            (Some(c), Some(p)) => {
                let gmm = GmmBaseline::new(ctx.data.train.x.clone(), sigma)?;
                let mut r = rng::indexed_stream(cfg.seed, Stream::Eval, k as u32);
                Some(mode_score(c, &gmm.sample(cfg.score_samples, &mut r), p)?)
            }
            _ => None,
        };
        rows.push(vec![num(sigma), num(val_nll), opt(mode)]);
    }
    write_csv(&ctx.out("gmm.csv"), &["sigma", "val_nll", "mode_score"], &rows)?;
    let best = GmmBaseline::new(ctx.data.train.x.clone(), search.sigma)?;
    if !ctx.data.test.is_empty() {
        let ll = best.log_density(&ctx.data.test.x)?;
        let nll = -ll.iter().sum::<f64>() / ll.len() as f64;
        println!("best sigma {} test nll {nll}", search.sigma);
    }
    Ok(())
}

pub fn eval_kde(ctx: &Context) -> CliResult {
    let cfg = &ctx.config;
    let model = ctx.model()?;
    let samples = model.sample_with(cfg.kde_samples, &mut rng::stream(cfg.seed, Stream::Kde))?;
    let search = gmm_bandwidth_search(&samples, &ctx.data.val.x, &cfg.bandwidth_grid())?;
    let curve: Vec<Vec<String>> = search.curve.iter().map(|&(s, v)| vec![num(s), num(v)]).collect();
    write_csv(&ctx.out("kde.csv"), &["sigma", "val_nll"], &curve)?;
    let eval = if ctx.data.test.is_empty() {
        &ctx.data.val
    } else {
        &ctx.data.test
    };
    let kde = kde_estimate(&samples, &eval.x, search.sigma)?;
    let kde_nll = -kde.iter().sum::<f64>() / kde.len() as f64;
    let exact = ctx.mean_nll(&model, &eval.x)?;
    write_csv(
        &ctx.out("kde_summary.csv"),
        &["sigma", "kde_nll", "exact_nll"],
        &[vec![num(search.sigma), num(kde_nll), num(exact)]],
    )
}

pub fn eval_ais(ctx: &Context) -> CliResult {
    let cfg = &ctx.config;
    let model = ctx.model()?;
    let ais = cfg.ais_config();
    let eval = if ctx.data.test.is_empty() {
        &ctx.data.val
    } else {
        &ctx.data.test
    };
    let n = cfg.ais_points.min(eval.len());
    let points = eval.x.select_rows(&(0..n).collect::<Vec<_>>());
    let exact = model.log_likelihood(&points)?;
    let results: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::indexed_stream(cfg.seed, Stream::Ais, i as u32);
            let res = ais_estimate(&model, points.row(i), &ais, &mut r)?;
            let se = res.bootstrap_stderr(
                AIS_BOOTSTRAP,
                &mut rng::indexed_stream(cfg.seed, Stream::Eval, i as u32),
            );
            Ok::<_, flowgan_core::Error>((res, se))
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(n + 1);
    let (mut sum_ais, mut sum_exact) = (0.0, 0.0);
    for (i, (res, se)) in results.iter().enumerate() {
        for w in &res.warnings {
            eprintln!("warning: point {i}: {w}");
        }
        let acc = res.acceptance.iter().sum::<f64>() / res.acceptance.len() as f64;
        sum_ais += res.log_p;
        sum_exact += exact.data()[i];
        rows.push(vec![
            i.to_string(),
            num(res.log_p),
            num(exact.data()[i]),
            num(*se),
            num(acc),
        ]);
    }
    rows.push(vec![
        "mean".into(),
        num(sum_ais / n as f64),
        num(sum_exact / n as f64),
        String::new(),
        String::new(),
    ]);
    write_csv(
        &ctx.out("ais.csv"),
        &["index", "ais_log_p", "exact_log_p", "stderr", "acceptance"],
        &rows,
    )
}

pub fn spectral(ctx: &Context) -> CliResult {
    let model = ctx.model()?;
    let report = spectral_report(&model, ctx.config.spectral_nz, ctx.config.seed)?;
    let mut rows: Vec<Vec<String>> = report.cdf.iter().map(|&(l, f)| vec![num(l), num(f)]).collect();
    rows.push(vec!["avg_logdet".into(), num(report.avg_logdet)]);
    write_csv(&ctx.out("spectral.csv"), &["log_sv", "cdf"], &rows)
}

pub fn sample(ctx: &Context) -> CliResult {
    let model = ctx.model()?;
    let x = model.sample(ctx.config.sample_n, ctx.config.seed)?;
    let header: Vec<String> = (0..x.cols()).map(|j| format!("x{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..x.rows())
        .map(|i| x.row(i).iter().map(|&v| num(v)).collect())
        .collect();
    write_csv(&ctx.out("samples.csv"), &header, &rows)
}

pub fn score(ctx: &Context) -> CliResult {
    let model = ctx.model()?;
    let classifier = ctx
        .classifier()?
        .ok_or("sample scores need a labeled dataset and classifier = true")?;
    let p_star = ctx.data.label_distribution().ok_or("dataset has no labels")?;
    let x = model.sample_with(
        ctx.config.score_samples,
        &mut rng::stream(ctx.config.seed, Stream::Eval),
    )?;
    let mode = mode_score(&classifier, &x, &p_star)?;
    let inception = inception_score(&classifier, &x)?;
    write_csv(
        &ctx.out("scores.csv"),
        &["mode_score", "inception_score"],
        &[vec![num(mode), num(inception)]],
    )
}
