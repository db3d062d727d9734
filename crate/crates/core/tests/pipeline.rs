use std::path::Path;

use shapetext::diffcore::Checkpoint;
use shapetext::encoders::{encode_fused, encode_text, Model};
use shapetext::evaluation::RankingResult;
use shapetext::pipeline::{
    build_vocabulary, gen_synthetic, score_gallery, train_model, Dataset, ExperimentConfig, LoadedModel, Prepared,
    Split, TrainOptions,
};
use shapetext::Error;

const POINTS: usize = 128;

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        embed_dim: 16,
        points: POINTS,
        views: 2,
        height: 16,
        width: 16,
        conv_channels: 4,
        patch: 2,
        depth: 1,
        heads: 2,
        word_dim: 8,
        hidden_dim: 8,
        batch_size: 8,
        epochs: 1,
        val_every: 0,
        ..ExperimentConfig::desk()
    }
}

fn dataset(dir: &Path, shapes: usize, captions: usize) -> Dataset {
    gen_synthetic(dir, 7, shapes, captions, POINTS).unwrap()
}

fn untrained(cfg: &ExperimentConfig, data: &Dataset) -> LoadedModel {
    let vocab = build_vocabulary(data);
    LoadedModel {
        config: cfg.clone(),
        model: Model::init(&cfg.model_dims(vocab.len()), cfg.seed).unwrap(),
        vocab,
        data_dir: Some(data.root.clone()),
    }
}

#[test]
fn one_epoch_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let data = dataset(&data_dir, 8, 2);
    let cfg = small_config();
    let (loaded, outcome) = train_model(&cfg, &data_dir, &TrainOptions::default()).unwrap();
    assert_eq!(outcome.epoch_losses.len(), 1);
    assert!(outcome.epoch_losses[0].is_finite());

    let ckpt = dir.path().join("m.ckpt");
    loaded.save(&ckpt).unwrap();
    let back = LoadedModel::load(&ckpt).unwrap();
    assert_eq!(back.config, cfg);
    assert_eq!(back.vocab, loaded.vocab);
    assert_eq!(back.data_dir.as_deref(), Some(data_dir.as_path()));
    assert!(shapetext::pipeline::vocab_path(&ckpt).exists());
    back.evaluate(&data, Split::Test).unwrap();
}

#[test]
fn checkpoint_resave_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"), 6, 1);
    let cfg = small_config();
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    untrained(&cfg, &data).save(&a).unwrap();
    LoadedModel::load(&a).unwrap().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn tampered_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"), 6, 1);
    let cfg = small_config();
    let path = dir.path().join("a.ckpt");
    let mut ckpt = untrained(&cfg, &data).to_checkpoint();
    let edited = ExperimentConfig {
        learning_rate: 0.5,
        ..cfg
    };
    ckpt.metadata.insert("config".into(), edited.to_toml());
    ckpt.save(&path).unwrap();
    assert!(matches!(LoadedModel::load(&path), Err(Error::Checkpoint(_))));
    assert!(Checkpoint::load(&path).is_ok());
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let data = dataset(&data_dir, 10, 1);
    let cfg = ExperimentConfig {
        learning_rate: 0.0,
        epochs: 3,
        batch_size: 32,
        ..small_config()
    };
    let (loaded, outcome) = train_model(&cfg, &data_dir, &TrainOptions::default()).unwrap();
    let init = untrained(&cfg, &data);
    assert_eq!(loaded.model.params, init.model.params);
    let first = outcome.epoch_losses[0];
    for l in &outcome.epoch_losses {
        assert!((l - first).abs() < 1e-12, "{:?}", outcome.epoch_losses);
    }
}

#[test]
fn loss_falls_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    dataset(&data_dir, 40, 3);
    let cfg = ExperimentConfig {
        epochs: 20,
        ..small_config()
    };
    let (_, outcome) = train_model(&cfg, &data_dir, &TrainOptions::default()).unwrap();
    let l = &outcome.epoch_losses;
    assert!(l[19] < l[0], "{l:?}");
}

#[test]
fn triplet_dump_lists_two_per_pair_per_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let data = dataset(&data_dir, 10, 2);
    let dump = dir.path().join("triplets.csv");
    train_model(
        &small_config(),
        &data_dir,
        &TrainOptions {
            dump_triplets: Some(dump.clone()),
        },
    )
    .unwrap();
    let text = std::fs::read_to_string(dump).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,batch,matrix,direction,anchor,positive,negative,loss"));
    let train = data.shapes_in(Split::Train).len();
    assert_eq!(lines.count(), 2 * 2 * train);
}

#[test]
fn gallery_of_one_is_always_found() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"), 2, 3);
    assert_eq!(data.shapes_in(Split::Test).len(), 1);
    let report = untrained(&small_config(), &data).evaluate(&data, Split::Test).unwrap();
    for dir in ["S2T", "T2S"] {
        let m = report.get(dir).unwrap();
        assert_eq!((m.rr1, m.rr5, m.ndcg5), (100.0, 100.0, 100.0));
    }
}

#[test]
fn evaluation_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"), 10, 2);
    let m = untrained(&small_config(), &data);
    let a = m.evaluate(&data, Split::Test).unwrap().to_json();
    let b = m.evaluate(&data, Split::Test).unwrap().to_json();
    assert_eq!(a, b);
}

#[test]
fn untrained_model_is_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    let data = dataset(&root, 120, 1);
    // Put 100 shapes in the test gallery.
    let splits: String = data
        .shape_ids
        .iter()
        .enumerate()
        .map(|(i, id)| format!("{id}\t{}\n", if i < 100 { "test" } else { "train" }))
        .collect();
    std::fs::write(root.join("splits.tsv"), splits).unwrap();
    let data = Dataset::load(&root).unwrap();
    assert_eq!(data.shapes_in(Split::Test).len(), 100);
    let report = untrained(&small_config(), &data).evaluate(&data, Split::Test).unwrap();
    // 100 queries at p = 0.01: at most 4 hits inside the two-sided 99% band.
    let rr1 = report.get("T2S").unwrap().rr1;
    assert!(rr1 <= 4.0, "T2S RR@1 {rr1}");
}

#[test]
fn retrieval_matches_the_evaluation_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(&dir.path().join("data"), 30, 2);
    let m = untrained(&small_config(), &data);
    let shapes = data.shapes_in(Split::Test);
    let query = &data.captions[data.captions_of(shapes[0])[0]].text;

    let prepared = Prepared::new(&data, &m.model, &m.vocab).unwrap();
    let fused: Vec<_> = shapes.iter().map(|&s| encode_fused(&prepared.inputs[s], &m.model).unwrap()).collect();
    let (tokens, _) = m.vocab.encode(query, m.model.dims.max_len).unwrap();
    let words = encode_text(&tokens, &m.model).unwrap().word_vectors;
    let scores = score_gallery(&fused, &[words], &m.config.match_config()).unwrap();
    let ranking = RankingResult::from_scores(&scores.transpose());
    let expected: Vec<&str> = ranking.ranking(0).iter().map(|&g| data.shape_ids[shapes[g]].as_str()).collect();

    let top1 = m.retrieve(&data, Split::Test, query, 1).unwrap();
    let argmax = (0..shapes.len()).fold(0, |b, g| if scores.at(g, 0) > scores.at(b, 0) { g } else { b });
    assert_eq!(top1[0].0, data.shape_ids[shapes[argmax]]);

    let top3: Vec<String> = m.retrieve(&data, Split::Test, query, 3).unwrap().into_iter().map(|r| r.0).collect();
    assert_eq!(top3, expected[..3]);

    let all = m.retrieve(&data, Split::Test, query, shapes.len()).unwrap();
    let mut ids: Vec<String> = all.into_iter().map(|r| r.0).collect();
    assert_eq!(ids, expected);
    ids.sort();
    let mut gallery: Vec<String> = shapes.iter().map(|&s| data.shape_ids[s].clone()).collect();
    gallery.sort();
    assert_eq!(ids, gallery);

    assert!(m.retrieve(&data, Split::Test, query, 0).is_err());
}
