use std::path::PathBuf;

use cgl_core::dictionary::TrainConfig;
use cgl_core::tensor_io::{AxtTensor, TokenLayout};
use cgl_core::tokens::{
    basis_rank_profile, direct_average_basis, exclusivity_census, fit_position_decoder, footprint, image_pca_map,
    position_component_correlation, remove_position, DecoderConfig, DEFAULT_EXCLUSIVITY_EPS,
};
use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::CliResult;
use crate::input;
use crate::run::RunDir;

#[derive(Args, Serialize)]
pub struct TokensCmd {
    #[command(subcommand)]
    action: TokensAction,
}

#[derive(Subcommand, Serialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
enum TokensAction {
    /// Where each concept fires along the token sequence
    Footprint(FootprintArgs),
    /// Positional decoder, basis rank and optional removal
    Position(PositionArgs),
    /// Per-image PCA of patch tokens as an image
    PcaMap(PcaMapArgs),
}

#[derive(Args, Serialize)]
struct FootprintArgs {
    /// Codes, (images·tokens) × concepts, images contiguous
    #[arg(long)]
    codes: PathBuf,
    /// CLS,REG,PATCH token counts
    #[arg(long, value_parser = input::parse_layout, default_value = "1,4,256")]
    layout: TokenLayout,
    #[arg(long, default_value_t = DEFAULT_EXCLUSIVITY_EPS)]
    eps: f64,
    /// Also write the per-position mean activation of this concept
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    concept: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum BasisArg {
    Classifier,
    Average,
}

#[derive(Args, Serialize)]
struct PositionArgs {
    /// Activation file (3-d)
    #[arg(long)]
    activations: PathBuf,
    #[arg(long, value_parser = input::parse_layout)]
    #[serde(skip_serializing_if = "Option::is_none")]
    layout: Option<TokenLayout>,
    #[arg(long, value_enum, default_value_t = BasisArg::Classifier)]
    basis: BasisArg,
    #[arg(long, default_value_t = 0.99)]
    energy: f64,
    /// Project out the top-r position directions and refit the decoder
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    remove: Option<usize>,
    /// Image and component count for the component/position correlation
    #[arg(long, default_value_t = 0)]
    image: usize,
    #[arg(long, default_value_t = 5)]
    components: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Fraction of images held out
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    /// Start the decoder from zero instead of the class-mean classifier
    #[arg(long)]
    cold_start: bool,
}

#[derive(Args, Serialize)]
struct PcaMapArgs {
    #[arg(long)]
    activations: PathBuf,
    #[arg(long, value_parser = input::parse_layout)]
    #[serde(skip_serializing_if = "Option::is_none")]
    layout: Option<TokenLayout>,
    #[arg(long, default_value_t = 0)]
    image: usize,
    #[arg(long, default_value_t = 3)]
    components: usize,
}

impl TokensCmd {
    pub fn action(&self) -> &'static str {
        match self.action {
            TokensAction::Footprint(_) => "footprint",
            TokensAction::Position(_) => "position",
            TokensAction::PcaMap(_) => "pca-map",
        }
    }

    pub fn run(&self, run: &RunDir, seed: u64) -> CliResult<()> {
        match &self.action {
            TokensAction::Footprint(a) => footprints(a, run),
            TokensAction::Position(a) => position(a, run, seed),
            TokensAction::PcaMap(a) => {
                let set = input::activations(&a.activations, a.layout)?;
                let map = image_pca_map(&set, a.image, a.components)?;
                run.write_text("map.csv", &map.to_csv())?;
                if map.channels == 3 {
                    map.write_ppm(run.path("map.ppm"))?;
                }
                run.write_json(
                    "report.json",
                    &serde_json::json!({ "image": a.image, "grid": map.grid, "channels": map.channels, "ppm": map.channels == 3 }),
                )
            }
        }
    }
}

fn footprints(a: &FootprintArgs, run: &RunDir) -> CliResult<()> {
    let z = input::codes(&a.codes)?;
    let census = exclusivity_census(&z, &a.layout, a.eps)?;
    run.write_csv(
        "footprints.csv",
        &["concept", "exclusivity", "entropy_bits"],
        census.per_concept.iter().zip(&census.entropy_bits).enumerate().map(|(i, (e, h))| {
            let kind = serde_json::to_value(e).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            vec![i.to_string(), kind, h.to_string()]
        }),
    )?;
    if let Some(i) = a.concept {
        let fp = footprint(&z, &a.layout, i, a.eps)?;
        run.write_csv("omega.csv", &["token", "mean_activation"], fp.omega.iter().enumerate().map(|(t, &w)| vec![t as f64, w]))?;
    }
    run.write_json(
        "report.json",
        &serde_json::json!({
            "layout": a.layout,
            "eps": census.eps,
            "none": census.none,
            "cls_only": census.cls_only,
            "reg_only": census.reg_only,
            "spatial_only": census.spatial_only,
        }),
    )
}

fn position(a: &PositionArgs, run: &RunDir, seed: u64) -> CliResult<()> {
    let set = input::activations(&a.activations, a.layout)?;
    let cfg = DecoderConfig {
        train: TrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            learning_rate: a.lr,
            seed,
            ..TrainConfig::default()
        },
        holdout: a.holdout,
        warm_start: !a.cold_start,
    };
    let fit = fit_position_decoder(&set, &cfg)?;
    let basis = match a.basis {
        BasisArg::Classifier => fit.basis.clone(),
        BasisArg::Average => direct_average_basis(&set),
    };
    let profile = basis_rank_profile(&basis, a.energy)?;
    let r = a.remove.unwrap_or(profile.rank_at_energy);
    let components = a.components.min(set.layout().n_patch).min(set.dim());
    let correlation = position_component_correlation(&set, a.image, &basis, r.max(1), components)?;
    run.write_axt("basis.axt", &AxtTensor::from_matrix(&basis.p_matrix).with_name("position_basis")?)?;
    run.write_csv(
        "singular_values.csv",
        &["index", "value"],
        profile.singular_values.iter().enumerate().map(|(i, &s)| vec![i as f64, s]),
    )?;
    let after = match a.remove {
        Some(r) => {
            let removed = remove_position(&set, &basis, r)?;
            removed.save(run.path("removed.axt"))?;
            Some(fit_position_decoder(&removed, &cfg)?.accuracy)
        }
        None => None,
    };
    run.write_json(
        "report.json",
        &serde_json::json!({
            "basis": basis.source,
            "accuracy": fit.accuracy,
            "train_accuracy": fit.train_accuracy,
            "chance": 1.0 / set.n_tokens() as f64,
            "degenerate_split": fit.degenerate,
            "test_images": fit.test_images,
            "profile": profile,
            "removed_rank": a.remove,
            "accuracy_after_removal": after,
            "component_position_correlation": correlation,
        }),
    )
}
