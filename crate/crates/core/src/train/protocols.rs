use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{prepare, LabeledSet, Prepared};
use super::fit::{embed, fit_classifier, predict_feed, pretrain, stream_features, Feed};
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::evaluate::{cohens_kappa, weighted_f1, EvalReport, MetricSummary, ReportProvenance};
use crate::ingest::{kfold_plans, subjects_of};
use crate::network::{Checkpoint, EncoderConfig, HeadKind, Network, Provenance, TrainPolicy};
use crate::seed::SeedStream;
use crate::types::{Sample, TaskSpec};

/// Checkpoint of an untrained encoder, the random-init reference.
pub fn random_checkpoint(
    encoder: &EncoderConfig,
    channels: &[usize],
    window_len: usize,
    seed: u64,
) -> Result<Checkpoint> {
    let mut net = Network::<f32>::encoder_only(encoder, channels, window_len, &SeedStream::new(seed))?;
    Ok(Checkpoint::from_network(
        &mut net,
        None,
        Provenance {
            seed,
            dataset: "random_init".into(),
            ..Provenance::default()
        },
    ))
}

fn check_compatible(ckpt: &Checkpoint, data: &Prepared) -> Result<()> {
    let channels = data.channels();
    if ckpt.channels != channels || ckpt.window_len != data.window_len() {
        return Err(Error::Checkpoint(format!(
            "channel mismatch: checkpoint expects {:?} × {}, data has {:?} × {}",
            ckpt.channels,
            ckpt.window_len,
            channels,
            data.window_len()
        )));
    }
    Ok(())
}

/// Pre-training must not have seen any evaluation subject.
fn audit_checkpoint(ckpt: &Checkpoint, data: &Prepared, context: &str) -> Result<()> {
    if ckpt.provenance.dataset != data.dataset {
        return Ok(());
    }
    if let Some(s) = ckpt
        .provenance
        .subjects
        .iter()
        .find(|s| data.plan.test_subjects.contains(*s))
    {
        return Err(Error::Leakage(format!(
            "{context}: checkpoint was pre-trained on test subject {s}"
        )));
    }
    Ok(())
}

fn provenance(data: &Prepared, ckpt: Option<&Checkpoint>, seed: u64) -> Result<ReportProvenance> {
    Ok(ReportProvenance {
        task: ckpt.and_then(|c| c.task.as_ref()).map(|t| t.task_id.to_string()),
        dataset: data.dataset.clone(),
        source_dataset: ckpt.map(|c| c.provenance.dataset.clone()),
        seed,
        checkpoint_hash: ckpt.map(Checkpoint::hash).transpose()?,
        train_subjects: data.plan.train_subjects.iter().cloned().collect(),
        test_subjects: data.plan.test_subjects.iter().cloned().collect(),
    })
}

fn score(y: &[usize], pred: &[usize]) -> Result<(f64, f64)> {
    Ok((weighted_f1(y, pred)?, cohens_kappa(y, pred)?))
}

fn require_two_classes(set: &LabeledSet) -> Result<()> {
    let first = set.labels.first().copied();
    if set.labels.iter().all(|&l| Some(l) == first) {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Linear classifier on the frozen encoder, trained `runs` times with fresh
/// head seeds.
pub fn linear_probe(ckpt: &Checkpoint, data: &Prepared, config: &TrainConfig) -> Result<EvalReport> {
    frozen_head_protocol("linear_probe", ckpt, data, config, TrainPolicy::EncoderFrozen)
}

/// As the probe, with the shared convolution trained too.
pub fn finetune_shared(ckpt: &Checkpoint, data: &Prepared, config: &TrainConfig) -> Result<EvalReport> {
    frozen_head_protocol("finetune_shared", ckpt, data, config, TrainPolicy::SharedConvOnly)
}

fn frozen_head_protocol(
    name: &str,
    ckpt: &Checkpoint,
    data: &Prepared,
    config: &TrainConfig,
    policy: TrainPolicy,
) -> Result<EvalReport> {
    config.validate()?;
    check_compatible(ckpt, data)?;
    data.audit(name)?;
    audit_checkpoint(ckpt, data, name)?;
    let train = data.train_set()?;
    require_two_classes(&train)?;
    let val = data.val_set()?;
    let test = data.test_set()?;
    let base = ckpt.to_network::<f32>()?;
    let seed = SeedStream::new(config.seed);
    let (mut f1s, mut kappas) = (Vec::new(), Vec::new());
    match policy {
        TrainPolicy::EncoderFrozen => {
            let z_train = embed(&base, train.modalities())?;
            let z_val = val.as_ref().map(|v| embed(&base, v.modalities())).transpose()?;
            let z_test = embed(&base, test.modalities())?;
            let val_feed = z_val.as_ref().map(Feed::Embeddings);
            for run in 0..config.runs {
                let mut net = base.clone();
                net.attach_classifier(HeadKind::Linear, data.num_classes, &seed.derive_path(&[0, run as u64]))?;
                net.set_trainable(policy);
                let v = val_feed.as_ref().zip(val.as_ref()).map(|(f, s)| (f, s.labels.as_slice()));
                fit_classifier(&mut net, &Feed::Embeddings(&z_train), &train.labels, v, config, &seed.derive_path(&[1, run as u64]))?;
                let (f, k) = score(&test.labels, &predict_feed(&net, &Feed::Embeddings(&z_test))?)?;
                f1s.push(f);
                kappas.push(k);
            }
        }
        _ => {
            let f_train = stream_features(&base, train.modalities())?;
            let f_val = val.as_ref().map(|v| stream_features(&base, v.modalities())).transpose()?;
            let f_test = stream_features(&base, test.modalities())?;
            let val_feed = f_val.as_ref().map(Feed::Features);
            for run in 0..config.runs {
                let mut net = base.clone();
                net.attach_classifier(HeadKind::Linear, data.num_classes, &seed.derive_path(&[0, run as u64]))?;
                net.set_trainable(policy);
                let v = val_feed.as_ref().zip(val.as_ref()).map(|(f, s)| (f, s.labels.as_slice()));
                fit_classifier(&mut net, &Feed::Features(&f_train), &train.labels, v, config, &seed.derive_path(&[1, run as u64]))?;
                let (f, k) = score(&test.labels, &predict_feed(&net, &Feed::Features(&f_test))?)?;
                f1s.push(f);
                kappas.push(k);
            }
        }
    }
    EvalReport::new(name, f1s, kappas, provenance(data, Some(ckpt), config.seed)?)
}

/// Paired low-data result: both arms saw the same instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowDataOutcome {
    pub pretrained: EvalReport,
    pub scratch: EvalReport,
    /// Training-set indices used by each run.
    pub subsets: Vec<Vec<usize>>,
}

impl LowDataOutcome {
    /// Pretrained-minus-scratch mean weighted F1.
    pub fn gain(&self) -> f64 {
        self.pretrained.f1_weighted.mean - self.scratch.f1_weighted.mean
    }
}

/// `n` random training indices per class, sorted.
pub fn balanced_subset(labels: &[usize], num_classes: usize, n: usize, seed: &SeedStream) -> Result<Vec<usize>> {
    let mut rng = seed.rng();
    let mut out = Vec::with_capacity(n * num_classes);
    for class in 0..num_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < n {
            return Err(Error::InsufficientInstances {
                class,
                needed: n,
                have: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        out.extend_from_slice(&idx[..n]);
    }
    out.sort_unstable();
    Ok(out)
}

/// Fine-tunes encoder and a 1024-unit head on `n_per_class` instances per
/// class, against a from-scratch network on the identical instances. No
/// early stopping.
pub fn lowdata(ckpt: &Checkpoint, data: &Prepared, n_per_class: usize, config: &TrainConfig) -> Result<LowDataOutcome> {
    config.validate()?;
    if n_per_class == 0 {
        return Err(Error::InvalidArgument("n_per_class must be >= 1".into()));
    }
    check_compatible(ckpt, data)?;
    data.audit("lowdata")?;
    audit_checkpoint(ckpt, data, "lowdata")?;
    let train = data.train_set()?;
    let test = data.test_set()?;
    let test_feed = Feed::Raw(test.modalities());
    let seed = SeedStream::new(config.seed);
    let fixed = TrainConfig {
        patience: None,
        ..config.clone()
    };
    let pretrained_base = ckpt.to_network::<f32>()?;
    let mut arms = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    let mut subsets = Vec::with_capacity(config.runs);
    for run in 0..config.runs {
        let r = run as u64;
        let subset = balanced_subset(&train.labels, data.num_classes, n_per_class, &seed.derive_path(&[0, r]))?;
        let sub = train.select(&subset);
        data.plan.audit("lowdata subset", data.train.iter().enumerate().filter(|(i, _)| subset.binary_search(i).is_ok()).map(|(_, s)| s))?;
        let scratch_base = Network::<f32>::encoder_only(
            &ckpt.config,
            &ckpt.channels,
            ckpt.window_len,
            &seed.derive_path(&[1, r]),
        )?;
        for (arm, base) in [&pretrained_base, &scratch_base].into_iter().enumerate() {
            let mut net = base.clone();
            net.attach_classifier(HeadKind::Nonlinear1024, data.num_classes, &seed.derive_path(&[2, r]))?;
            net.set_trainable(TrainPolicy::All);
            if fixed.max_epochs > 0 {
                fit_classifier(&mut net, &Feed::Raw(sub.modalities()), &sub.labels, None, &fixed, &seed.derive_path(&[3, r]))?;
            }
            let (f, k) = score(&test.labels, &predict_feed(&net, &test_feed)?)?;
            arms[arm].0.push(f);
            arms[arm].1.push(k);
        }
        subsets.push(subset);
    }
    let [(pf, pk), (sf, sk)] = arms;
    let prov = provenance(data, Some(ckpt), config.seed)?;
    let mut pretrained = EvalReport::new(&format!("lowdata_n{n_per_class}"), pf, pk, prov.clone())?;
    let scratch = EvalReport::new(&format!("lowdata_n{n_per_class}_scratch"), sf, sk, ReportProvenance {
        checkpoint_hash: None,
        source_dataset: None,
        ..prov
    })?;
    pretrained
        .extra
        .insert("scratch_f1_weighted".into(), scratch.f1_weighted.clone());
    Ok(LowDataOutcome {
        pretrained,
        scratch,
        subsets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    Probe,
    LowData { n_per_class: usize },
}

/// Evaluates a source-pretrained encoder on a target dataset.
pub fn transfer(source: &Checkpoint, target: &Prepared, mode: TransferMode, config: &TrainConfig) -> Result<EvalReport> {
    check_compatible(source, target)?;
    let mut report = match mode {
        TransferMode::Probe => linear_probe(source, target, config)?,
        TransferMode::LowData { n_per_class } => lowdata(source, target, n_per_class, config)?.pretrained,
    };
    report.protocol = format!("transfer_{}", report.protocol);
    report.provenance.source_dataset = Some(source.provenance.dataset.clone());
    Ok(report)
}

/// Subject-disjoint k-fold evaluation: per fold, pre-train on the fold's
/// training subjects, then probe (and optionally fine-tune the shared layer).
/// One entry per fold, each the mean over `probe.runs` heads.
#[allow(clippy::too_many_arguments)]
pub fn crossvalidate(
    dataset: &str,
    samples: &[Sample],
    num_classes: usize,
    task: &TaskSpec,
    encoder: &EncoderConfig,
    pretrain_config: &TrainConfig,
    probe_config: &TrainConfig,
    folds: usize,
    with_finetune: bool,
) -> Result<EvalReport> {
    let subjects = subjects_of(samples);
    let plans = kfold_plans(&subjects, folds, 0.2, &SeedStream::new(pretrain_config.seed).derive(99))?;
    let (mut f1s, mut kappas, mut ft) = (Vec::new(), Vec::new(), Vec::new());
    let mut tested = BTreeSet::new();
    for plan in &plans {
        let data = prepare(dataset, samples, plan, num_classes)?;
        data.audit("crossvalidate")?;
        let outcome = pretrain(
            &data.train,
            &data.val,
            task,
            encoder,
            pretrain_config,
            Provenance {
                dataset: dataset.to_string(),
                ..Provenance::default()
            },
        )?;
        let ckpt = outcome.checkpoint;
        let trained_on: BTreeSet<&String> = ckpt.provenance.subjects.iter().collect();
        if trained_on.iter().any(|s| !plan.train_subjects.contains(*s)) {
            return Err(Error::Leakage("fold pre-training used non-training subjects".into()));
        }
        let probe = linear_probe(&ckpt, &data, probe_config)?;
        f1s.push(probe.f1_weighted.mean);
        kappas.push(probe.kappa.mean);
        if with_finetune {
            ft.push(finetune_shared(&ckpt, &data, probe_config)?.f1_weighted.mean);
        }
        tested.extend(plan.test_subjects.iter().cloned());
    }
    debug_assert_eq!(tested.len(), subjects.len());
    let mut report = EvalReport::new(
        "crossvalidate",
        f1s,
        kappas,
        ReportProvenance {
            task: Some(task.task_id.to_string()),
            dataset: dataset.to_string(),
            seed: pretrain_config.seed,
            ..ReportProvenance::default()
        },
    )?;
    if with_finetune {
        report
            .extra
            .insert("finetune_shared_f1_weighted".into(), MetricSummary::from_values(ft)?);
    }
    Ok(report)
}

/// Same encoder plus linear output trained end-to-end on labels, with early
/// stopping on the validation subjects.
pub fn supervised_baseline(data: &Prepared, encoder: &EncoderConfig, config: &TrainConfig) -> Result<EvalReport> {
    config.validate()?;
    data.audit("supervised_baseline")?;
    let train = data.train_set()?;
    require_two_classes(&train)?;
    let val = data.val_set()?;
    let test = data.test_set()?;
    let seed = SeedStream::new(config.seed);
    let (mut f1s, mut kappas) = (Vec::new(), Vec::new());
    for run in 0..config.runs {
        let r = run as u64;
        let mut net = Network::<f32>::encoder_only(encoder, &data.channels(), data.window_len(), &seed.derive_path(&[0, r]))?;
        net.attach_classifier(HeadKind::Linear, data.num_classes, &seed.derive_path(&[1, r]))?;
        net.set_trainable(TrainPolicy::All);
        let val_feed = val.as_ref().map(|v| Feed::Raw(v.modalities()));
        let v = val_feed.as_ref().zip(val.as_ref()).map(|(f, s)| (f, s.labels.as_slice()));
        fit_classifier(&mut net, &Feed::Raw(train.modalities()), &train.labels, v, config, &seed.derive_path(&[2, r]))?;
        let (f, k) = score(&test.labels, &predict_feed(&net, &Feed::Raw(test.modalities()))?)?;
        f1s.push(f);
        kappas.push(k);
    }
    EvalReport::new("supervised_baseline", f1s, kappas, provenance(data, None, config.seed)?)
}
