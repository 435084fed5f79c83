use std::fs;
use std::path::Path;

use ndarray::{array, Array2};

use ednsc::edn::{
    loss_stage1, loss_stage2, train_stage1, train_stage2, DecoderParams, EdnModel, EncoderParams, TrainConfig,
    DEFAULT_CODE_BIAS,
};
use ednsc::eval::{format_table, mcd};
use ednsc::features::{dtw, mcc_extract, synth_corpus, AlignmentMap, MccConfig, SynthConfig};
use ednsc::nmf::{build_exemplar_dictionaries, enmf_convert, kld_columns, mean_kld, SolveOptions};
use ednsc::pipeline::{self, fmat, manifest, PipelineConfig, Split, System};
use ednsc::{Dictionary, FrameMatrix};

fn small_corpus() -> SynthConfig {
    SynthConfig {
        dim: 24,
        n_bases: 8,
        n_utterances: 6,
        n_eval: 2,
        frames_per_utterance: 40,
        ..SynthConfig::default()
    }
}

fn small_train() -> TrainConfig<f64> {
    TrainConfig {
        batch_size: 16,
        stage1_epochs: 4,
        stage2_epochs: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn repeated_target_frames_align_with_zero_cost() {
    let src = array![[0.0, 0.0, 0.0], [1.0, 5.0, 9.0], [0.0, -2.0, 3.0]];
    let tgt = Array2::from_shape_fn((3, 6), |(d, j)| src[[d, j / 2]]);
    let r = dtw(src.view(), tgt.view()).unwrap();
    assert_eq!(r.cost, 0.0);
    for (i, &j) in r.map.as_slice().iter().enumerate() {
        assert!(j / 2 == i, "frame {i} mapped to {j}");
    }
}

#[test]
fn oracle_dictionaries_convert_noiseless_frames() {
    let c = synth_corpus::<f64>(&small_corpus(), 3).unwrap();
    let (x, y) = c.oracle_pairs(c.train_ids());
    let opts = SolveOptions {
        max_iters: 1000,
        tol: 0.0,
        ..SolveOptions::default()
    };
    let out = enmf_convert(&x, &c.ux, &c.uy, &opts).unwrap();
    let worst = kld_columns(&y, &out, 1e-12).unwrap().into_iter().fold(0.0, f64::max);
    assert!(worst < 1e-4, "worst per-frame conversion KLD {worst}");
}

#[test]
fn single_basis_frame_converts_to_paired_column() {
    let c = synth_corpus::<f64>(&small_corpus(), 4).unwrap();
    let k = 5;
    let x = FrameMatrix::new(c.ux.as_array().column(k).to_owned().insert_axis(ndarray::Axis(1))).unwrap();
    let want = FrameMatrix::new(c.uy.as_array().column(k).to_owned().insert_axis(ndarray::Axis(1))).unwrap();
    let out = enmf_convert(&x, &c.ux, &c.uy, &SolveOptions::default()).unwrap();
    assert!(mean_kld(&want, &out, 1e-12).unwrap() < 1e-3);
}

#[test]
fn stage2_loss_is_linear_in_alpha() {
    let c = synth_corpus::<f64>(&small_corpus(), 5).unwrap();
    let (x, y) = c.oracle_pairs(0..1);
    let theta = EncoderParams::he_init(24, [10, 10], 8, 1);
    let dec = DecoderParams::from_dictionaries(&c.ux, &c.uy).unwrap();
    let l0 = loss_stage2(&x, &y, &theta, &dec, 0.0).unwrap();
    let l1 = loss_stage2(&x, &y, &theta, &dec, 1.0).unwrap();
    let lh = loss_stage2(&x, &y, &theta, &dec, 0.5).unwrap();
    assert!((l1 - loss_stage1(&x, &theta, &dec.ux()).unwrap()).abs() < 1e-12);
    assert!((lh - 0.5 * (l0 + l1)).abs() < 1e-12);
}

#[test]
fn stage1_with_oracle_dictionary_cuts_loss_tenfold() {
    let cfg = SynthConfig {
        dim: 32,
        n_bases: 12,
        n_utterances: 10,
        n_eval: 0,
        frames_per_utterance: 60,
        ..SynthConfig::default()
    };
    let c = synth_corpus::<f64>(&cfg, 6).unwrap();
    let (x, _) = c.oracle_pairs(c.train_ids());
    let tc = TrainConfig {
        batch_size: 32,
        stage1_epochs: 100,
        ..TrainConfig::default()
    };
    let theta = EncoderParams::data_init(&x, [128, 128], 12, 2, DEFAULT_CODE_BIAS).unwrap();
    let out = train_stage1(&x, theta, &c.ux, &tc).unwrap();
    let (first, last) = (out.log[0].loss, out.log.last().unwrap().loss);
    assert!(last < 0.1 * first, "loss {first} -> {last}");
}

#[test]
fn zero_epochs_leave_encoder_unchanged() {
    let c = synth_corpus::<f64>(&small_corpus(), 7).unwrap();
    let (x, _) = c.oracle_pairs(c.train_ids());
    let theta = EncoderParams::he_init(24, [10, 10], 8, 3);
    let tc = TrainConfig {
        stage1_epochs: 0,
        ..small_train()
    };
    assert_eq!(train_stage1(&x, theta.clone(), &c.ux, &tc).unwrap().encoder, theta);
}

#[test]
fn training_is_deterministic() {
    let c = synth_corpus::<f64>(&small_corpus(), 8).unwrap();
    let (x, y) = c.oracle_pairs(c.train_ids());
    let ex = build_exemplar_dictionaries(&x, &y, &AlignmentMap::identity(x.ncols()), 8, 1).unwrap();
    let run = || {
        let tc = small_train();
        let s1 = train_stage1(&x, EncoderParams::he_init(24, [10, 10], 8, 4), &ex.ux, &tc).unwrap();
        let dec = DecoderParams::from_dictionaries(&ex.ux, &ex.uy).unwrap();
        train_stage2(&x, &y, s1.encoder, dec, &tc).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.encoder, b.encoder);
    assert_eq!(a.decoders, b.decoders);
}

#[test]
fn alpha_one_keeps_target_dictionary() {
    let c = synth_corpus::<f64>(&small_corpus(), 9).unwrap();
    let (x, y) = c.oracle_pairs(c.train_ids());
    let ex = build_exemplar_dictionaries(&x, &y, &AlignmentMap::identity(x.ncols()), 8, 2).unwrap();
    let tc = TrainConfig {
        alpha: 1.0,
        ..small_train()
    };
    let dec = DecoderParams::from_dictionaries(&ex.ux, &ex.uy).unwrap();
    let before = dec.uy();
    let out = train_stage2(&x, &y, EncoderParams::he_init(24, [10, 10], 8, 5), dec, &tc).unwrap();
    assert_eq!(out.decoders.uy(), before);
}

#[test]
fn conversion_is_encoder_then_decoder() {
    let c = synth_corpus::<f64>(&small_corpus(), 10).unwrap();
    let (x, _) = c.oracle_pairs(c.eval_ids());
    let m = EdnModel {
        encoder: EncoderParams::he_init(24, [10, 10], 8, 6),
        decoders: DecoderParams::from_dictionaries(&c.ux, &c.uy).unwrap(),
    };
    let codes = m.raw_codes(&x).unwrap().unit_sum();
    let direct = ednsc::edn::decode(&codes, &m.decoders.uy()).unwrap();
    assert_eq!(m.convert(&x).unwrap(), direct);
    for col in direct.as_array().columns() {
        assert!(col.iter().all(|v| *v >= 0.0));
        assert!((col.sum() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn mcd_is_symmetric() {
    let c = synth_corpus::<f64>(&small_corpus(), 11).unwrap();
    let cfg = MccConfig {
        n_mel: 12,
        order: 8,
        ..MccConfig::default()
    };
    let a = mcc_extract(&c.source_frames(0), cfg).unwrap();
    let b = mcc_extract(&c.target_frames(0), cfg).unwrap();
    let (ab, ba) = (mcd(a.view(), b.view(), true).unwrap(), mcd(b.view(), a.view(), true).unwrap());
    assert!(ab.mean > 0.0);
    assert_eq!(ab.mean, ba.mean);
}

fn pipeline_config(root: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.apply_text(
        "seed = 11\n\
         synth_dim = 24\n\
         synth_bases = 8\n\
         synth_utterances = 6\n\
         synth_eval = 2\n\
         synth_frames = 40\n\
         n_mel = 16\n\
         mcc_order = 10\n\
         dict_sizes = 8,24\n\
         hidden_1 = 16\n\
         hidden_2 = 16\n\
         batch_size = 32\n\
         stage1_epochs = 4\n\
         stage2_epochs = 4\n",
    )
    .unwrap();
    cfg.out_dir = Some(root.to_path_buf());
    cfg
}

struct Dirs<'a>(&'a Path);

impl Dirs<'_> {
    fn get(&self, s: &str) -> std::path::PathBuf {
        self.0.join(s)
    }
}

fn synth_and_prepare(base: &PipelineConfig, d: &Dirs<'_>) {
    let mut c = base.clone();
    c.out_dir = Some(d.get("corpus"));
    pipeline::cmd_synth(&c).unwrap();
    let mut c = base.clone();
    c.corpus_dir = Some(d.get("corpus"));
    c.out_dir = Some(d.get("prepared"));
    pipeline::cmd_prepare(&c).unwrap();
}

#[test]
fn pipeline_end_to_end_contracts() {
    let root = tempfile::tempdir().unwrap();
    let d = Dirs(root.path());
    let base = pipeline_config(root.path());
    synth_and_prepare(&base, &d);

    // Manifests list every written file.
    for dir in ["corpus", "prepared"] {
        assert!(manifest::verify_manifest(&d.get(dir)).unwrap().is_empty());
        let listed = manifest::entries(&d.get(dir)).unwrap().len();
        let text = fs::read_to_string(d.get(dir).join(manifest::MANIFEST_NAME)).unwrap();
        assert_eq!(text.lines().count(), listed);
    }

    // Aligned pair files have matching column counts.
    let ids: Vec<String> = (0..6).map(pipeline::utterance_id).collect();
    for id in &ids {
        let (src, tgt) = pipeline::load_pair(&d.get("prepared"), id).unwrap();
        assert_eq!(src.ncols(), tgt.ncols());
    }

    let mut c = base.clone();
    c.prepared_dir = Some(d.get("prepared"));
    c.out_dir = Some(d.get("model"));
    let t = pipeline::cmd_train(&c).unwrap();
    let first2 = t.log.iter().find(|r| r.stage == 2).unwrap();
    assert_eq!(t.log[0].lr, 0.001);
    assert_eq!(first2.lr, 0.01);
    assert!(t.log.last().unwrap().loss < t.log[0].loss);

    let convert = |system: System, k: Option<usize>, name: &str| {
        let mut c = base.clone();
        c.system = system;
        c.dict_size = k;
        c.model_dir = Some(d.get("model"));
        c.input_dir = Some(d.get("prepared"));
        c.out_dir = Some(d.get(name));
        pipeline::cmd_convert(&c).unwrap()
    };
    convert(System::Edn, None, "edn");
    convert(System::Enmf, Some(8), "enmf");
    pipeline::write_reference_as_converted(&d.get("prepared"), &d.get("oracle"), Split::Eval).unwrap();
    for name in ["edn", "enmf"] {
        for entry in fs::read_dir(d.get(name)).unwrap() {
            let p = entry.unwrap().path();
            if p.extension().is_some_and(|e| e == "fmat") {
                assert!(fmat::read_file(&p).unwrap().iter().all(|v| *v >= 0.0));
            }
        }
    }

    let mut c = base.clone();
    c.reference_dir = Some(d.get("prepared"));
    c.converted_dirs = vec![d.get("oracle"), d.get("edn"), d.get("enmf")];
    c.out_dir = Some(d.get("report"));
    let reports = pipeline::cmd_evaluate(&c).unwrap();
    assert_eq!(reports.len(), 3);
    assert!(reports[0].mean_mcd_db.abs() < 1e-9);
    assert!(reports[1].mean_mcd_db > 0.0);
    let csv = fs::read_to_string(d.get("report").join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    assert!(format_table(&reports).contains("EDN-8"));
}

#[test]
fn prepare_is_idempotent_and_self_alignment_is_identity() {
    let root = tempfile::tempdir().unwrap();
    let d = Dirs(root.path());
    let mut base = pipeline_config(root.path());
    synth_and_prepare(&base, &d);
    let first = manifest::entries(&d.get("prepared")).unwrap();
    let mut c = base.clone();
    c.corpus_dir = Some(d.get("corpus"));
    c.out_dir = Some(d.get("prepared"));
    pipeline::cmd_prepare(&c).unwrap();
    assert_eq!(manifest::entries(&d.get("prepared")).unwrap(), first);

    // Replace every target with its source and prepare again.
    let corpus = d.get("corpus");
    for i in 0..6 {
        let id = pipeline::utterance_id(i);
        for suffix in ["fmat", "f0.fmat"] {
            fs::copy(corpus.join("source").join(format!("{id}.{suffix}")), corpus.join("target").join(format!("{id}.{suffix}"))).unwrap();
        }
    }
    base.out_dir = Some(d.get("self"));
    let mut c = base;
    c.corpus_dir = Some(corpus);
    pipeline::cmd_prepare(&c).unwrap();
    for i in 0..6 {
        let id = pipeline::utterance_id(i);
        let map = fmat::read_file(&d.get("self").join("pairs").join(format!("{id}.align.fmat"))).unwrap();
        assert!(map.iter().enumerate().all(|(n, v)| *v == n as f64), "{id} is not the identity");
    }
}

#[test]
fn identical_exemplar_dictionaries_reproduce_reconstruction() {
    let c = synth_corpus::<f64>(&small_corpus(), 12).unwrap();
    let (x, _) = c.oracle_pairs(c.eval_ids());
    let u: Dictionary = c.ux.clone();
    let opts = SolveOptions::default();
    let out = enmf_convert(&x, &u, &u, &opts).unwrap();
    let v = ednsc::nmf::solve_activation(&x, &u, &opts).unwrap();
    assert_eq!(out, ednsc::edn::decode(&v.unit_sum(), &u).unwrap());
}
