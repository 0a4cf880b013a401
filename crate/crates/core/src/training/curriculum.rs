use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::iqa::{fit_niqe_model, format_value, niqe, NiqeModel};
use crate::network::{save_checkpoint, Network};

use super::config::TrainConfig;
use super::data::{split_validation, Provenance, Sample};
use super::optim::OptimState;
use super::supervised::{metrics_csv, train_supervised, EpochMetrics, TrainReport};

/// Labeled, admitted and pool samples plus the fixed admission anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumState {
    labeled: Vec<Sample>,
    pool: Vec<Sample>,
    admitted: Vec<Sample>,
    n_a: f64,
    round: usize,
    tau: f64,
}

impl CurriculumState {
    /// `labeled` must carry true labels; pool targets, if any, are dropped.
    pub fn new(labeled: Vec<Sample>, pool: Vec<Sample>, n_a: f64, tau: f64) -> Result<Self> {
        if let Some(s) = labeled.iter().find(|s| s.provenance() != Provenance::TrueLabel) {
            return Err(Error::InvalidArgument(format!("sample {} is not a true label", s.id())));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
        }
        let pool: Vec<Sample> = pool.iter().map(Sample::without_target).collect();
        let mut ids: Vec<&str> = labeled.iter().chain(&pool).map(Sample::id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!("duplicate sample id {}", w[0])));
        }
        Ok(Self {
            labeled,
            pool,
            admitted: Vec::new(),
            n_a,
            round: 0,
            tau,
        })
    }

    pub fn labeled(&self) -> &[Sample] {
        &self.labeled
    }

    pub fn pool(&self) -> &[Sample] {
        &self.pool
    }

    pub fn admitted(&self) -> &[Sample] {
        &self.admitted
    }

    pub fn n_a(&self) -> f64 {
        self.n_a
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Labeled followed by admitted samples.
    pub fn training_set(&self) -> Vec<Sample> {
        self.labeled.iter().chain(&self.admitted).cloned().collect()
    }
}

/// One row of `curriculum.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub labeled: usize,
    /// Acting labels accumulated so far.
    pub acting: usize,
    pub pool: usize,
    /// Admitted in this round.
    pub admitted: usize,
    pub n_a: f64,
    pub tau: f64,
    /// `(id, NIQE of the response)` for every scored pool sample, in id order.
    /// Unscorable responses are reported as infinite.
    pub scores: Vec<(String, f64)>,
    /// Copies of the samples admitted in this round, as admitted.
    pub newly_admitted: Vec<Sample>,
    /// The pool was empty so nothing was done.
    pub empty_pool: bool,
}

impl RoundRecord {
    pub const CSV_HEADER: &'static str = "round,labeled,acting,pool,admitted,n_a,tau";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.round,
            self.labeled,
            self.acting,
            self.pool,
            self.admitted,
            format_value(self.n_a),
            format_value(self.tau)
        )
    }
}

pub fn curriculum_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(RoundRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Scores the network response of every pool sample and admits those with
/// `NIQE <= N_a + tau` as acting labels. Responses that cannot be scored
/// only pass an infinite threshold.
pub fn curriculum_round(
    state: &CurriculumState,
    net: &Network<f32>,
    model: &NiqeModel,
) -> Result<(CurriculumState, RoundRecord)> {
    let mut next = state.clone();
    let mut record = RoundRecord {
        round: state.round,
        labeled: state.labeled.len(),
        acting: state.admitted.len(),
        pool: state.pool.len(),
        admitted: 0,
        n_a: state.n_a,
        tau: state.tau,
        scores: Vec::new(),
        newly_admitted: Vec::new(),
        empty_pool: state.pool.is_empty(),
    };
    if record.empty_pool {
        return Ok((next, record));
    }
    let mut ordered: Vec<&Sample> = state.pool.iter().collect();
    ordered.sort_by(|a, b| a.id().cmp(b.id()));
    let threshold = state.n_a + state.tau;
    let mut remaining = Vec::new();
    for s in ordered {
        let response = net.enhance(s.low())?;
        let score = niqe(&response, model).unwrap_or(f64::INFINITY);
        record.scores.push((s.id().to_string(), score));
        if score <= threshold {
            let sample = Sample::acting(s.id(), s.low().clone(), response)?;
            record.newly_admitted.push(sample.clone());
            next.admitted.push(sample);
        } else {
            remaining.push(s.clone());
        }
    }
    next.pool = remaining;
    next.round += 1;
    record.round = next.round;
    record.acting = next.admitted.len();
    record.pool = next.pool.len();
    record.admitted = next.admitted.len() - state.admitted.len();
    Ok((next, record))
}

/// Everything a semi-supervised run produced.
#[derive(Clone, Debug)]
pub struct SemiSupervisedReport {
    pub net: Network<f32>,
    /// Absent when the pool was empty and no quality model was needed.
    pub niqe_model: Option<NiqeModel>,
    pub n_a: Option<f64>,
    pub validation: Vec<Sample>,
    pub pretrain: TrainReport,
    /// Retraining phases, one per round that admitted something.
    pub phases: Vec<TrainReport>,
    pub rounds: Vec<RoundRecord>,
    pub final_state: Option<CurriculumState>,
    pub checkpoints: Vec<PathBuf>,
}

impl SemiSupervisedReport {
    pub fn all_metrics(&self) -> Vec<EpochMetrics> {
        std::iter::once(&self.pretrain)
            .chain(&self.phases)
            .flat_map(|r| r.records.iter().cloned())
            .collect()
    }

    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.all_metrics())
    }

    pub fn curriculum_csv(&self) -> String {
        curriculum_csv(&self.rounds)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn checkpoint_path(out: &Path, round: usize) -> PathBuf {
    out.join("checkpoints").join(format!("round-{round}.ckpt"))
}

fn save_round(
    out: Option<&Path>,
    net: &Network<f32>,
    config: &TrainConfig,
    round: usize,
    report: &TrainReport,
    training_size: usize,
    saved: &mut Vec<PathBuf>,
) -> Result<()> {
    if let Some(out) = out {
        let path = checkpoint_path(out, round);
        let mut meta = BTreeMap::new();
        meta.insert("round".to_string(), round.to_string());
        meta.insert("epochs".to_string(), report.epochs_run.to_string());
        meta.insert("train_seed".to_string(), config.seed.to_string());
        meta.insert("training_samples".to_string(), training_size.to_string());
        save_checkpoint(net, meta, &path)?;
        saved.push(path);
    }
    Ok(())
}

/// Writes `logs/metrics.csv` under `out`.
pub fn write_metrics(out: &Path, records: &[EpochMetrics]) -> Result<()> {
    write_text(&out.join("logs").join("metrics.csv"), &metrics_csv(records))
}

/// Supervised training on the labeled set alone, checkpointed as round 0.
/// This is what a curriculum run reduces to when the pool is empty.
pub fn run_supervised(labeled: &[Sample], config: &TrainConfig, out: Option<&Path>) -> Result<SemiSupervisedReport> {
    run_semi_supervised(labeled, &[], config, out)
}

/// Pretrains on the labeled set, then alternates admission rounds and
/// retraining on labeled plus admitted samples. Parameters carry over
/// between phases; each phase starts a fresh optimizer at the initial
/// learning rate. When `out` is given the run directory is written there.
pub fn run_semi_supervised(
    labeled: &[Sample],
    pool: &[Sample],
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<SemiSupervisedReport> {
    config.validate()?;
    if labeled.is_empty() || labeled.iter().any(|s| s.target().is_none()) {
        return Err(Error::Insufficient("a non-empty set of labeled samples is required".into()));
    }
    let (train, validation) = split_validation(labeled, config.val_fraction, config.seed);
    let mut net = Network::new(config.net_config())?;
    let mut checkpoints = Vec::new();

    let (niqe_model, n_a) = if pool.is_empty() {
        (None, None)
    } else {
        let targets: Vec<_> = labeled.iter().filter_map(|s| s.target().cloned()).collect();
        let model = fit_niqe_model(&targets, config.niqe_patch)?;
        let scores = targets.iter().map(|t| niqe(t, &model)).collect::<Result<Vec<f64>>>()?;
        let n_a = scores.iter().sum::<f64>() / scores.len() as f64;
        (Some(model), Some(n_a))
    };

    let mut opt = OptimState::new(net.params(), config);
    let pretrain = train_supervised(&train, &validation, config, &mut net, &mut opt, 0)?;
    save_round(out, &net, config, 0, &pretrain, train.len(), &mut checkpoints)?;

    let mut phases = Vec::new();
    let mut rounds = Vec::new();
    let mut final_state = None;
    if let (Some(model), Some(n_a)) = (&niqe_model, n_a) {
        let mut state = CurriculumState::new(train.clone(), pool.to_vec(), n_a, config.tau)?;
        while state.round() < config.max_rounds && !state.pool().is_empty() {
            let (next, record) = curriculum_round(&state, &net, model)?;
            let admitted = record.admitted;
            rounds.push(record);
            state = next;
            if admitted == 0 {
                break;
            }
            let training_set = state.training_set();
            let mut opt = OptimState::new(net.params(), config);
            let report = train_supervised(&training_set, &validation, config, &mut net, &mut opt, state.round())?;
            save_round(out, &net, config, state.round(), &report, training_set.len(), &mut checkpoints)?;
            phases.push(report);
        }
        final_state = Some(state);
    }

    let report = SemiSupervisedReport {
        net,
        niqe_model,
        n_a,
        validation,
        pretrain,
        phases,
        rounds,
        final_state,
        checkpoints,
    };
    if let Some(out) = out {
        write_metrics(out, &report.all_metrics())?;
        write_text(&out.join("curriculum.csv"), &report.curriculum_csv())?;
        if let Some(model) = &report.niqe_model {
            model.save(out.join("niqe-model.json"))?;
        }
    }
    Ok(report)
}
