use std::fs;
use std::path::{Path, PathBuf};

use super::*;
use crate::model::{Hyperparameters, LatentState};
use crate::sampler::{run_chains, SamplerConfig};
use crate::simulate::{simulate_dataset, SimulationConfig};
use crate::Error;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn data_config(obs: PathBuf) -> DataConfig {
    DataConfig { observations: obs, w: None, z: None, w_components: None }
}

const HEADER: &str = "chemical_id,gene_id,dose_um,replicate,response\n";

#[test]
fn three_row_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write(dir.path(), "obs.csv", &format!("{HEADER}A,g1,1.0,1,0.5\nA,g1,10,1,0.7\nB,g2,0.02,1,-0.1\n"));
    let ing = load_and_validate(&data_config(obs), &DoseBins::default()).unwrap();
    assert_eq!(ing.data.n_cells(), 3);
    assert_eq!(ing.chemicals, vec!["A", "B"]);
    assert_eq!(ing.genes, vec!["g1", "g2"]);
    assert_eq!(ing.data.get(&(0, 0, 2)), Some(&[0.5][..]));
    assert_eq!(ing.data.get(&(0, 0, 3)), Some(&[0.7][..]));
    assert_eq!(ing.data.get(&(1, 1, 0)), Some(&[-0.1][..]));
    assert!(ing.report.is_balanced() && ing.report.dropped.is_empty());
}

#[test]
fn duplicate_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let obs = write(dir.path(), "obs.csv", &format!("{HEADER}A,g1,1.0,1,0.5\nA,g1,1.0,1,0.6\n"));
    match load_and_validate(&data_config(obs), &DoseBins::default()) {
        Err(Error::DuplicateKey { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected duplicate error, got {other:?}"),
    }
}

#[test]
fn malformed_rows_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    for (body, line) in [
        ("A,g1,1.0,1,0.5\nA,g1,abc,2,0.1\n", 3),
        ("A,g1,1.0,1,0.5\nA,g1,1.0,0,0.1\n", 3),
        ("A,g1,-1,1,0.5\n", 2),
        (",g1,1,1,0.5\n", 2),
        ("A,g1,1,1\n", 2),
    ] {
        let obs = write(dir.path(), "bad.csv", &format!("{HEADER}{body}"));
        match load_and_validate(&data_config(obs), &DoseBins::default()) {
            Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{body}"),
            other => panic!("{body}: {other:?}"),
        }
    }
    let obs = write(dir.path(), "hdr.csv", "chemical,gene_id,dose_um,replicate,response\nA,g1,1,1,0\n");
    assert!(matches!(load_and_validate(&data_config(obs), &DoseBins::default()), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn drops_are_counted() {
    let dir = tempfile::tempdir().unwrap();
    let body = "\
chemical_id,gene_id,dose_um,replicate,response,response_kind
A,g1,1.0,1,0.5,log2fold_negctrl
A,g1,10,1,0.7,log2fold_negctrl
A,g1,1.0,2,0.4,log2fold_negctrl
A,g1,5000,1,0.1,log2fold_negctrl
A,g2,1.0,1,33,percent_activity
X,g1,1.0,1,0.2,log2fold_negctrl
";
    let obs = write(dir.path(), "obs.csv", body);
    let w = write(dir.path(), "w.csv", "chemical_id,logp,mw\nA,1.5,300\nB,2.5,100\n");
    let z = write(dir.path(), "z.csv", "gene_id,immune,blood\ng9,1,0\n");
    let cfg = DataConfig { observations: obs, w: Some(w), z: Some(z), w_components: None };
    let ing = load_and_validate(&cfg, &DoseBins::default()).unwrap();
    let r = &ing.report;
    assert_eq!(r.input_rows, 6);
    assert_eq!(r.dropped[&DropReason::PercentActivity], 1);
    assert_eq!(r.dropped[&DropReason::DoseOutOfRange], 1);
    assert_eq!(r.dropped[&DropReason::ChemicalMissingFromW], 1);
    // replicate 2 of A/g1 was only run at 1 µM
    assert_eq!(r.dropped[&DropReason::InconsistentReplicates], 1);
    assert_eq!(r.retained_rows, 2);
    assert!(r.is_balanced());
    assert!(r.notes.iter().any(|n| n.contains("chemical X")));
    assert_eq!(ing.chemicals, vec!["A"]);
    assert_eq!(ing.covariates.w.as_ref().unwrap().row(0).iter().copied().collect::<Vec<_>>(), vec![1.5, 300.0]);
    assert_eq!(ing.covariates.z.as_ref().unwrap().iter().sum::<f64>(), 0.0);
}

#[test]
fn harmonize_examples() {
    let rec = |kind| ObservationRecord {
        chemical_id: "A".into(),
        gene_id: "g".into(),
        dose_um: 1.0,
        replicate: 1,
        response: 0.0,
        kind,
        line: 2,
    };
    let mut report = IngestReport::default();
    let all = vec![rec(ResponseKind::Log2foldNegctrl); 3];
    assert_eq!(harmonize_response(all.clone(), &mut report), all);
    assert!(report.dropped.is_empty());
    let mixed = vec![rec(ResponseKind::Log2foldNegctrl), rec(ResponseKind::PercentActivity), rec(ResponseKind::PercentActivity)];
    assert_eq!(harmonize_response(mixed, &mut report).len(), 1);
    assert_eq!(report.dropped[&DropReason::PercentActivity], 2);
    let mut empty = IngestReport::default();
    assert!(harmonize_response(Vec::new(), &mut empty).is_empty());
    assert!(empty.dropped.is_empty());
}

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:03}")).collect()
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{}", i + 1)).collect()
}

#[test]
fn simulate_write_load_is_identity() {
    let cfg = SimulationConfig { n: 7, m: 6, d: 6, k: 2, p: 3, q: 4, pi_miss: 0.2, seed: 9, ..SimulationConfig::default() };
    let ds = simulate_dataset(&cfg, &Hyperparameters::with_k(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bins = DoseBins { centers: ds.data.grid().coords().to_vec(), ..DoseBins::default() };
    let (chems, genes) = (ids("C", cfg.n), ids("G", cfg.m));
    let obs = dir.path().join("obs.csv");
    write_observations(&obs, &ds.data, &chems, &genes, &bins).unwrap();
    let w = dir.path().join("w.csv");
    write_labeled_matrix(&w, "chemical_id", &chems, &names("w", cfg.p), ds.covariates.w.as_ref().unwrap()).unwrap();
    let z = dir.path().join("z.csv");
    write_labeled_matrix(&z, "gene_id", &genes, &names("z", cfg.q), ds.covariates.z.as_ref().unwrap()).unwrap();
    let ing = load_and_validate(&DataConfig { observations: obs, w: Some(w), z: Some(z), w_components: None }, &bins).unwrap();
    assert_eq!(ing.data, ds.data);
    assert_eq!(ing.covariates, ds.covariates);
    assert_eq!((ing.chemicals, ing.genes), (chems.clone(), genes));
    assert_eq!(ing.report.retained_rows, ds.data.n_observations());

    let dict = dir.path().join("chemicals.csv");
    write_dictionary(&dict, "chemical_id", &chems).unwrap();
    assert_eq!(read_dictionary(&dict).unwrap(), chems);
}

#[test]
fn pca_option_reduces_w() {
    let dir = tempfile::tempdir().unwrap();
    let mut obs = String::from(HEADER);
    let mut w = String::from("chemical_id,a,b,c\n");
    for i in 0..6 {
        obs.push_str(&format!("c{i},g,1,1,{}\n", i as f64 / 10.0));
        w.push_str(&format!("c{i},{},{},{}\n", i, (i * i) as f64, (i as f64).sin()));
    }
    let cfg = DataConfig {
        observations: write(dir.path(), "obs.csv", &obs),
        w: Some(write(dir.path(), "w.csv", &w)),
        z: None,
        w_components: Some(2),
    };
    let ing = load_and_validate(&cfg, &DoseBins::default()).unwrap();
    assert_eq!(ing.covariates.w.unwrap().shape(), (6, 2));
    assert!(ing.report.notes.iter().any(|n| n.contains("principal components")));
}

#[test]
fn draws_round_trip() {
    let cfg = SimulationConfig { n: 3, m: 3, d: 3, k: 2, p: 2, q: 2, seed: 4, ..SimulationConfig::default() };
    let ds = simulate_dataset(&cfg, &Hyperparameters::with_k(2)).unwrap();
    let model = crate::model::DartModel::new(cfg.variant, &ds.data, &ds.covariates, &ds.hyper).unwrap();
    let sampler = SamplerConfig { chains: 2, warmup: 20, samples: 5, ..SamplerConfig::default() };
    let draws = run_chains(&model, &sampler).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("draws.csv");
    write_draws(&path, model.layout(), &draws).unwrap();
    let (layout, back) = read_draws(&path).unwrap();
    assert_eq!(&layout, model.layout());
    assert_eq!(back.draws, draws.draws);
    assert_eq!(back.log_posterior, draws.log_posterior);
    assert_eq!((back.chain, back.iteration, back.divergent), (draws.chain, draws.iteration, draws.divergent));
    let state = LatentState::from_unconstrained(&layout, &back.draws[0]).unwrap();
    assert_eq!(state.dims, layout.dims);

    let junk = write(dir.path(), "junk.csv", "chain,iteration\n");
    assert!(matches!(read_draws(&junk), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn run_config_parsing() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
model = "dart-nc"

[data]
observations = "obs.csv"
z = "/abs/z.csv"

[sampler]
chains = 2
warmup = 50

[hyper]
k = 3
"#;
    let path = write(dir.path(), "run.toml", text);
    let cfg = RunConfig::from_file(&path).unwrap();
    assert_eq!(cfg.model, crate::model::Variant::DartNc);
    assert_eq!(cfg.sampler.chains, 2);
    assert_eq!(cfg.sampler.samples, SamplerConfig::default().samples);
    assert_eq!(cfg.hyper.k, 3);
    let data = cfg.data().unwrap();
    assert_eq!(data.observations, dir.path().join("obs.csv"));
    assert_eq!(data.z.as_deref(), Some(Path::new("/abs/z.csv")));
    assert_eq!(RunConfig::parse(&cfg.to_toml().unwrap()).unwrap(), cfg);

    for bad in ["modle = \"dart\"", "[sampler]\nchain = 2", "[sampler]\ntarget_accept = 1.5", "model = \"other\""] {
        assert!(matches!(RunConfig::parse(bad), Err(Error::Config(_))), "{bad}");
    }
    assert!(RunConfig::parse("").unwrap().data().is_err());
}
