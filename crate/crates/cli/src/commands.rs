use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ude_core::aggregation::{aggregate, MIConfig};
use ude_core::config::Config;
use ude_core::data::{
    generate, load_csv, save_csv, zscore_apply, zscore_fit, CsvOptions, NanPolicy, Series, ZScoreStats,
    ZeroVariancePolicy,
};
use ude_core::embedding::{build_hankel, partition_patches, DelayConfig};
use ude_core::encoder::{high_attention_tokens, load_checkpoint, save_checkpoint, EncoderModel};
use ude_core::io::fmt_f64;
use ude_core::koopman::{extract_latent_trajectory, fit_koopman_lagged, spectrum, write_spectrum_csv, write_trajectory_csv};
use ude_core::topology::{cluster_tokens, patch_diagrams, token_distance_matrix, TopologyParams};
use ude_core::training::{evaluate, finetune, train, TrainConfig, TrainReport};
use ude_core::{Error, Result};

use crate::{
    AggregateArgs, AttnArgs, Cli, Command, EmbedArgs, EvaluateArgs, FinetuneArgs, ForecastArgs, GenerateArgs,
    InputArgs, KoopmanArgs, NanArg, TdaArgs, TrainArgs, TrainOverrides,
};

pub fn run(cli: &Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, cli.seed.unwrap_or(0)),
        Command::Embed(a) => cmd_embed(a, &config),
        Command::Train(a) => cmd_train(a, &config),
        Command::Finetune(a) => cmd_finetune(a, &config),
        Command::Forecast(a) => cmd_forecast(a, &config),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Tda(a) => cmd_tda(a, &config),
        Command::Koopman(a) => cmd_koopman(a),
        Command::Attn(a) => cmd_attn(a),
        Command::Aggregate(a) => cmd_aggregate(a, &config),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn load(input: &InputArgs) -> Result<Series> {
    let opts = CsvOptions {
        nan_policy: match input.nan_policy {
            NanArg::Reject => NanPolicy::Reject,
            NanArg::ForwardFill => NanPolicy::ForwardFill,
            NanArg::DropRow => NanPolicy::DropRow,
        },
        skip_first_column: input.skip_first_column,
        ..CsvOptions::default()
    };
    load_csv(&input.input, &opts)
}

/// Z-scores every channel with its training-split statistics.
fn normalized(series: &Series) -> Result<(Series, ZScoreStats)> {
    let stats = zscore_fit(series, ZeroVariancePolicy::PassThrough)?;
    Ok((zscore_apply(series, &stats)?, stats))
}

fn window_start(len: usize, lookback: usize, start: Option<usize>) -> Result<usize> {
    let start = match start {
        Some(s) => s,
        None => len.checked_sub(lookback).ok_or(Error::SeriesTooShort { needed: lookback, got: len })?,
    };
    if start + lookback > len {
        return Err(Error::SeriesTooShort {
            needed: start + lookback,
            got: len,
        });
    }
    Ok(start)
}

fn cmd_generate(a: &GenerateArgs, seed: u64) -> Result<()> {
    let series = generate(a.kind.into(), a.length, seed)?;
    save_csv(&series, &a.out)?;
    println!("wrote {} samples x {} channels to {}", series.len(), series.n_channels(), a.out.display());
    Ok(())
}

fn cmd_embed(a: &EmbedArgs, config: &Config) -> Result<()> {
    let series = load(&a.input)?;
    let channel = series.resolve_channel(&a.channel)?;
    let d = config.delay;
    let cfg = DelayConfig::new(a.m.unwrap_or(d.m), a.tau.unwrap_or(d.tau), a.p.unwrap_or(d.p), a.q.unwrap_or(d.q))?;
    let hankel = build_hankel(&series.channels[channel], &cfg)?;
    let grid = partition_patches(&hankel, &cfg)?;
    create_dir(&a.out)?;
    let mut manifest = String::from("patch,u,v,row_start,col_start,file\n");
    for j in 0..grid.len() {
        let (u, v) = grid.position(j);
        let name = format!("patch_{:04}.csv", j + 1);
        let patch = &grid.patches[j];
        let mut body = String::new();
        for r in 0..patch.nrows() {
            let row: Vec<String> = (0..patch.ncols()).map(|c| fmt_f64(patch[(r, c)])).collect();
            body.push_str(&row.join(","));
            body.push('\n');
        }
        write_file(&a.out.join(&name), &body)?;
        let _ = writeln!(manifest, "{},{},{},{},{},{name}", j + 1, u + 1, v + 1, u * cfg.p, v * cfg.q);
    }
    write_file(&a.out.join("manifest.csv"), &manifest)?;
    println!(
        "hankel {}x{}, {}x{} patches of {}x{} ({} rows and {} columns left over)",
        hankel.rows(),
        hankel.cols(),
        grid.u_count,
        grid.v_count,
        cfg.p,
        cfg.q,
        grid.leftover_rows,
        grid.leftover_cols
    );
    Ok(())
}

fn apply_overrides(mut cfg: TrainConfig, o: &TrainOverrides) -> TrainConfig {
    if let Some(e) = o.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = o.lr {
        cfg.lr = lr;
    }
    if let Some(b) = o.batch_size {
        cfg.batch_size = b;
    }
    if let Some(s) = o.window_stride {
        cfg.window_stride = s;
    }
    cfg
}

fn emit_report(report: &TrainReport, o: &TrainOverrides) -> Result<()> {
    if let Some(path) = &o.report {
        report.save_csv(path)?;
    }
    match &o.summary {
        Some(path) => write_file(path, &report.summary(false)),
        None => {
            print!("{}", report.summary(true));
            Ok(())
        }
    }
}

fn cmd_train(a: &TrainArgs, config: &Config) -> Result<()> {
    let mut corpus = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        let series = load_csv(path, &CsvOptions::default())?;
        corpus.push(normalized(&series)?.0);
    }
    let mut model = match &a.init {
        Some(path) => load_checkpoint(path)?,
        None => EncoderModel::new(config.model_config())?,
    };
    let base = if a.low_lr {
        TrainConfig {
            lr: TrainConfig::pretrain_low_lr().lr,
            ..config.train
        }
    } else {
        config.train
    };
    let cfg = apply_overrides(base, &a.train);
    let report = train(&mut model, &corpus, &cfg)?;
    save_checkpoint(&model, &a.out)?;
    emit_report(&report, &a.train)
}

fn cmd_finetune(a: &FinetuneArgs, config: &Config) -> Result<()> {
    let mut model = load_checkpoint(&a.model)?;
    let (series, _) = normalized(&load(&a.input)?)?;
    let base = TrainConfig {
        lr: TrainConfig::finetune().lr,
        data_fraction: a.fraction,
        ..config.train
    };
    let cfg = apply_overrides(base, &a.train);
    let report = finetune(&mut model, &series, &cfg)?;
    save_checkpoint(&model, &a.out)?;
    emit_report(&report, &a.train)
}

/// Parses `target=<name> topk=<k>`; `topk` defaults to the config.
fn parse_aggregate(values: &[String], default_k: usize) -> Result<(String, usize)> {
    let mut target = None;
    let mut k = default_k;
    for v in values {
        match v.split_once('=') {
            Some(("target", t)) if !t.is_empty() => target = Some(t.to_string()),
            Some(("topk", n)) => {
                k = n
                    .parse()
                    .map_err(|_| Error::InvalidParam(format!("topk must be a nonnegative integer, got {n:?}")))?;
            }
            _ => {
                return Err(Error::InvalidParam(format!(
                    "--aggregate expects target=<name> topk=<k>, got {v:?}"
                )))
            }
        }
    }
    let target = target.ok_or_else(|| Error::InvalidParam("--aggregate needs target=<name>".into()))?;
    Ok((target, k))
}

fn mi_config(config: &Config, topk: Option<usize>) -> Result<MIConfig> {
    match topk {
        Some(k) if k != config.mi.top_k => Ok(MIConfig {
            n_bins: config.mi.n_bins,
            ..MIConfig::with_top_k(k)?
        }),
        _ => Ok(config.mi),
    }
}

fn forecast_table(names: &[String], columns: &[Vec<f64>]) -> String {
    let mut out = String::from("step,");
    out.push_str(&names.join(","));
    out.push('\n');
    let horizon = columns.first().map_or(0, Vec::len);
    for h in 0..horizon {
        let row: Vec<String> = columns.iter().map(|c| fmt_f64(c[h])).collect();
        let _ = writeln!(out, "{},{}", h + 1, row.join(","));
    }
    out
}

fn cmd_forecast(a: &ForecastArgs, config: &Config) -> Result<()> {
    let aggregate_spec = a
        .aggregate
        .as_deref()
        .map(|v| parse_aggregate(v, config.mi.top_k))
        .transpose()?;
    let model = load_checkpoint(&a.model)?;
    let series = load(&a.input)?;
    let (norm, stats) = normalized(&series)?;
    let lookback = model.lookback();
    let start = window_start(series.len(), lookback, None)?;
    let mut forecasts = Vec::with_capacity(series.n_channels());
    for (c, x) in norm.channels.iter().enumerate() {
        let s = stats.channels[c];
        let y = model.forecast(&x[start..start + lookback])?;
        forecasts.push(y.into_iter().map(|v| v * s.std + s.mean).collect::<Vec<f64>>());
    }
    let mut names = series.names.clone();
    if let Some((target, k)) = aggregate_spec {
        let t = series.resolve_channel(&target)?;
        let agg = aggregate(&series, &forecasts, t, &mi_config(config, Some(k))?)?;
        for n in &agg.neighbors {
            println!("neighbour {} nmi={}", series.names[n.channel], fmt_f64(n.nmi));
        }
        names.push(format!("{}_aggregated", series.names[t]));
        forecasts.push(agg.blend.values);
    }
    write_file(&a.out, &forecast_table(&names, &forecasts))
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    if let Some(h) = a.horizon {
        if h != model.horizon() {
            return Err(Error::InvalidParam(format!(
                "--horizon {h} does not match the checkpoint's horizon {}",
                model.horizon()
            )));
        }
    }
    let (series, _) = normalized(&load(&a.input)?)?;
    let report = evaluate(&model, &series, a.stride)?;
    match &a.out {
        Some(path) => report.save_csv(path),
        None => report
            .write_csv(std::io::stdout().lock())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn cmd_tda(a: &TdaArgs, config: &Config) -> Result<()> {
    let series = load(&a.input)?;
    let channel = series.resolve_channel(&a.channel)?;
    let (norm, _) = normalized(&series)?;
    let lookback = config.window.lookback;
    let start = window_start(series.len(), lookback, a.start)?;
    let x = &norm.channels[channel][start..start + lookback];
    let hankel = build_hankel(x, &config.delay)?;
    let grid = partition_patches(&hankel, &config.delay)?;
    let params = TopologyParams {
        distance: a.distance.into(),
        axis: a.axis.into(),
        ..TopologyParams::default()
    };
    let diagrams = patch_diagrams(&grid, &params)?;
    let dm = token_distance_matrix(&grid, &params)?;
    let labels = cluster_tokens(&dm, a.clusters)?;
    create_dir(&a.out)?;
    write_with(&a.out.join("diagrams.csv"), |buf| {
        use std::io::Write;
        writeln!(buf, "patch,dim,birth,death")?;
        for (j, d) in diagrams.iter().enumerate() {
            let mut one = Vec::new();
            d.write_csv(&mut one)?;
            for line in String::from_utf8_lossy(&one).lines().skip(1) {
                writeln!(buf, "{},{line}", j + 1)?;
            }
        }
        Ok(())
    })?;
    write_with(&a.out.join("distances.csv"), |buf| dm.write_csv(buf))?;
    let mut clusters = String::from("patch,cluster\n");
    for (j, l) in labels.iter().enumerate() {
        let _ = writeln!(clusters, "{},{l}", j + 1);
    }
    write_file(&a.out.join("clusters.csv"), &clusters)?;
    println!("{} patches, {} clusters", grid.len(), a.clusters);
    Ok(())
}

fn cmd_koopman(a: &KoopmanArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let series = load(&a.input)?;
    let channel = series.resolve_channel(&a.channel)?;
    let (norm, _) = normalized(&series)?;
    let traj = extract_latent_trajectory(&norm, channel, &model, a.stride)?;
    let fit = fit_koopman_lagged(&traj, a.lag)?;
    let eig = spectrum(&fit.k)?;
    create_dir(&a.out)?;
    write_with(&a.out.join("trajectory.csv"), |buf| write_trajectory_csv(&traj, buf))?;
    write_with(&a.out.join("spectrum.csv"), |buf| write_spectrum_csv(&eig, buf))?;
    let mut operator = String::new();
    for r in 0..fit.k.nrows() {
        let row: Vec<String> = (0..fit.k.ncols()).map(|c| fmt_f64(fit.k[(r, c)])).collect();
        operator.push_str(&row.join(","));
        operator.push('\n');
    }
    write_file(&a.out.join("operator.csv"), &operator)?;
    println!(
        "{} states of dimension {}, residual {}, diagonalizable {}",
        traj.len(),
        traj.latent_dim,
        fmt_f64(fit.residual),
        fit.diagonalizable
    );
    Ok(())
}

fn cmd_attn(a: &AttnArgs) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let series = load(&a.input)?;
    let channel = series.resolve_channel(&a.channel)?;
    let (norm, _) = normalized(&series)?;
    let lookback = model.lookback();
    let start = window_start(series.len(), lookback, a.start)?;
    let latent = model.latent(&norm.channels[channel][start..start + lookback], true)?;
    let high = high_attention_tokens(&latent)?;
    let mut out = String::from("token,first_patch,last_patch,flags\n");
    for (t, count) in high.histogram.iter().enumerate() {
        let patches = model
            .config
            .token_patches(t)
            .ok_or_else(|| Error::IndexOutOfRange(format!("token {t}")))?;
        let _ = writeln!(out, "{t},{},{},{count}", patches.start + 1, patches.end);
    }
    write_file(&a.out, &out)?;
    match high.top_token() {
        Some(t) => println!("top token {t} ({} flags in total)", high.total_flags()),
        None => println!("no token flagged"),
    }
    Ok(())
}

fn cmd_aggregate(a: &AggregateArgs, config: &Config) -> Result<()> {
    let series = load(&a.input)?;
    let forecast_series = load_csv(&a.forecasts, &CsvOptions {
        skip_first_column: true,
        ..CsvOptions::default()
    })?;
    let mut forecasts = Vec::with_capacity(series.n_channels());
    for name in &series.names {
        let c = forecast_series.channel_index(name).ok_or_else(|| {
            Error::DimensionMismatch(format!("forecast file has no column {name:?}"))
        })?;
        forecasts.push(forecast_series.channels[c].clone());
    }
    let target = series.resolve_channel(&a.target)?;
    let agg = aggregate(&series, &forecasts, target, &mi_config(config, a.topk)?)?;
    for n in &agg.neighbors {
        println!("neighbour {} nmi={}", series.names[n.channel], fmt_f64(n.nmi));
    }
    let names = vec![series.names[target].clone()];
    write_file(&a.out, &forecast_table(&names, &[agg.blend.values]))
}
