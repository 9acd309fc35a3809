use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bbpc_core::ans::DEFAULT_P_BITS;
use bbpc_core::bench::{self, BenchConfig, DatasetSpec};
use bbpc_core::bitsback::{compress_grids, decompress_batch, Container};
use bbpc_core::cvae::{CvaeConfig, CvaeModel, TrainConfig};
use bbpc_core::geometry::{devoxelize, load_points, save_points, voxelize, PointCloud, ShapeKind};
use bbpc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "bbpc", version, about = "Bits-back compression of voxelized point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic point clouds as text files.
    Gen(GenArgs),
    /// Train a CVAE on a directory of point clouds.
    Train(TrainArgs),
    /// Compress a directory of point clouds into one container.
    Compress(CompressArgs),
    /// Decompress a container into voxel-centre point clouds.
    Decompress(DecompressArgs),
    /// bpp against batch size for both codecs, as CSV.
    SweepBatch(SweepArgs),
    /// bpp and decoder size against bit-depth for both codecs, as CSV.
    SweepDepth(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    /// sphere-surface, box-surface, plane, cluster, or mixed.
    #[arg(long, default_value = "mixed")]
    kind: String,
    #[arg(long, default_value_t = 200)]
    clouds: usize,
    #[arg(long, default_value_t = 2000)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4)]
    depth: u8,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_P_BITS)]
    pbits: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Decode the container again and compare with the input grids.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct DecompressArgs {
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Directory for the decoded clouds.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compare the decoded grids with the voxelized clouds in `--data`.
    #[arg(long, requires = "data")]
    verify: bool,
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Bit-depth, or a comma-separated list for sweep-depth.
    #[arg(long, default_value = "4")]
    depth: String,
    /// Comma-separated batch sizes.
    #[arg(long, default_value = "1,10,100")]
    batch: String,
    /// Pre-trained model (sweep-batch only); trained from scratch otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_P_BITS)]
    pbits: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    train_clouds: usize,
    #[arg(long, default_value_t = 100)]
    eval_clouds: usize,
    #[arg(long, default_value_t = 2000)]
    points: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Compress(a) => compress(a),
        Command::Decompress(a) => decompress(a),
        Command::SweepBatch(a) => sweep(a, false),
        Command::SweepDepth(a) => sweep(a, true),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cloud_name(i: usize) -> String {
    format!("cloud_{i:04}.txt")
}

/// Every `*.txt` file in `dir`, sorted by name.
fn load_dir(dir: &Path) -> Result<Vec<PointCloud>> {
    let io = |e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(io)?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "txt"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no .txt clouds", dir.display())));
    }
    paths.iter().map(load_points).collect()
}

fn gen(a: GenArgs) -> Result<()> {
    let kind = match a.kind.as_str() {
        "mixed" => None,
        k => Some(k.parse::<ShapeKind>()?),
    };
    let spec = DatasetSpec {
        kind,
        clouds: a.clouds,
        points: a.points,
        seed: a.seed,
    };
    create_dir(&a.out)?;
    for (i, pc) in spec.generate()?.iter().enumerate() {
        save_points(pc, a.out.join(cloud_name(i)))?;
    }
    println!("wrote {} clouds to {}", a.clouds, a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let clouds = load_dir(&a.data)?;
    let grids = bench::voxelize_all(&clouds, a.depth)?;
    let mut model = CvaeModel::new(CvaeConfig::new(a.depth)?, a.seed)?;
    let config = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        batch_size: a.batch,
        seed: a.seed,
    };
    model.train_with(&grids, &config, |epoch, bits| {
        println!("epoch {:>4}  loss {bits:.2} bits/grid", epoch + 1);
    })?;
    model.save(&a.out)?;
    println!(
        "saved {} ({} bytes, hash {:016x})",
        a.out.display(),
        model.decoder_size_bytes(),
        model.hash()
    );
    Ok(())
}

fn compress(a: CompressArgs) -> Result<()> {
    let model = CvaeModel::load(&a.model)?;
    let clouds = load_dir(&a.data)?;
    let grids = bench::voxelize_all(&clouds, model.depth())?;
    let points = clouds.iter().map(|c| c.len() as u64).sum();
    let compressed = compress_grids(&grids, points, &model, a.pbits, a.seed)?;
    compressed.container.save(&a.out)?;
    let r = compressed.report();
    println!(
        "{} clouds, {} points: {} bits ({} initial), {:.4} bpp",
        grids.len(),
        points,
        r.total_bits,
        r.initial_bits,
        r.bpp
    );
    if a.verify {
        let decoded = decompress_batch(&Container::load(&a.out)?, &model)?;
        println!("lossless: {}", decoded == grids);
        if decoded != grids {
            return Err(Error::Codec("round trip changed the grids".into()));
        }
    }
    Ok(())
}

fn decompress(a: DecompressArgs) -> Result<()> {
    let model = CvaeModel::load(&a.model)?;
    let container = Container::load(&a.input)?;
    let grids = decompress_batch(&container, &model)?;
    println!("decoded {} grids at depth {}", grids.len(), container.depth);
    if let Some(out) = &a.out {
        create_dir(out)?;
        for (i, g) in grids.iter().enumerate() {
            // An empty grid has no voxel centres to write.
            match devoxelize(g) {
                Ok(pc) => save_points(&pc, out.join(cloud_name(i)))?,
                Err(Error::EmptyOutput(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    if a.verify {
        let dir = a.data.as_deref().expect("clap enforces --data with --verify");
        let expected = load_dir(dir)?
            .iter()
            .map(|c| voxelize(c, container.depth))
            .collect::<Result<Vec<_>>>()?;
        let ok = expected == grids;
        println!("lossless: {ok}");
        if !ok {
            return Err(Error::Codec("decoded grids differ from the reference clouds".into()));
        }
    }
    Ok(())
}

fn sweep(a: SweepArgs, by_depth: bool) -> Result<()> {
    let depths = bench::parse_list::<u8>(&a.depth)?;
    let config = BenchConfig {
        train_set: DatasetSpec {
            kind: None,
            clouds: a.train_clouds,
            points: a.points,
            seed: a.seed,
        },
        eval_set: DatasetSpec {
            kind: None,
            clouds: a.eval_clouds,
            points: a.points,
            seed: a.seed.wrapping_add(1),
        },
        depths: depths.clone(),
        batches: bench::parse_list(&a.batch)?,
        p_bits: a.pbits,
        train: TrainConfig {
            epochs: a.epochs,
            lr: a.lr,
            seed: a.seed,
            ..TrainConfig::default()
        },
        model_seed: a.seed,
        codec_seed: a.seed,
        ..BenchConfig::default()
    };
    let report = |d: u8, r: &bbpc_core::cvae::TrainReport| {
        if let Some(last) = r.epoch_loss_bits.last() {
            eprintln!("d={d}: trained {} epochs, final loss {last:.2} bits/grid", r.epoch_loss_bits.len());
        }
    };
    let rows = if by_depth {
        bench::sweep_depth_with(&config, report)?
    } else {
        if depths.len() != 1 {
            return Err(Error::Config("sweep-batch takes a single --depth".into()));
        }
        let model = match &a.model {
            Some(path) => CvaeModel::load(path)?,
            None => {
                let train = config.train_set.generate()?;
                let (m, r) = bench::train_model(depths[0], &train, &config.train, config.model_seed)?;
                report(depths[0], &r);
                m
            }
        };
        if model.depth() != depths[0] {
            return Err(Error::Config(format!(
                "model is for depth {}, sweep asked for {}",
                model.depth(),
                depths[0]
            )));
        }
        bench::sweep_batch(&config, &model)?
    };
    match &a.out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            bench::write_csv(&rows, file)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => bench::write_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}
