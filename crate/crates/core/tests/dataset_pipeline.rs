use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use kinenet::dataset::{
    build_dataset, stream_batches, AugmentationGrid, BuildOptions, GridCell, ImageSample, Manifest, Split, SplitMode,
};
use kinenet::{binary_label, builtin_catalog, classify_stability, Catalog, RenderStyle};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk_catalog() -> Catalog {
    let full = builtin_catalog();
    let pick = |names: &[&str]| names.iter().map(|n| full.find(n).unwrap().clone()).collect();
    Catalog {
        training_examples: pick(&["triangle", "rhombus", "hinged_square", "hinged_pentagon"]),
        holdout_examples: pick(&["house_rigid_eaves", "double_square"]),
    }
}

fn build(dir: &std::path::Path, seed: u64, options: BuildOptions) -> Manifest {
    build_dataset(&desk_catalog(), &AugmentationGrid::desk(), &RenderStyle::default(), seed, dir, options).unwrap()
}

fn files(m: &Manifest) -> Vec<Vec<u8>> {
    m.samples.iter().map(|s| fs::read(m.image_path(s)).unwrap()).collect()
}

#[test]
fn desk_counts_and_unique_cells() {
    let dir = tempfile::tempdir().unwrap();
    let m = build(dir.path(), 1, BuildOptions::default());
    assert_eq!(AugmentationGrid::desk().cell_count(), 27);
    assert_eq!(m.samples.len(), 6 * 27);
    assert_eq!((m.count(Split::Train), m.count(Split::Val), m.count(Split::Test)), (54, 27, 27));
    assert_eq!(m.count(Split::Holdout), 54);
    let mut keys: Vec<(String, usize, usize, usize)> =
        m.samples.iter().map(|s| (s.structure_name.clone(), s.cell.scale_idx, s.cell.rot_idx, s.cell.trans_idx)).collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), m.samples.len());
    for s in &m.samples {
        assert!(m.image_path(s).is_file());
        let expected = format!("{}/{}/{}_{}_{}.png", s.split, s.structure_name, s.cell.scale_idx, s.cell.rot_idx, s.cell.trans_idx);
        assert_eq!(s.path, PathBuf::from(expected));
    }
}

#[test]
fn sampled_labels_match_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let m = build(dir.path(), 2, BuildOptions::default());
    let catalog = builtin_catalog();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for s in m.samples.choose_multiple(&mut rng, 20) {
        let entry = catalog.find(&s.structure_name).unwrap();
        assert_eq!(binary_label(&classify_stability(&entry.structure)), s.label, "{}", s.path.display());
    }
}

#[test]
fn stream_covers_each_split_once() {
    let dir = tempfile::tempdir().unwrap();
    let m = build(dir.path(), 3, BuildOptions::default());
    for split in [Split::Train, Split::Val, Split::Test, Split::Holdout] {
        let mut seen: Vec<usize> = Vec::new();
        for batch in stream_batches(&m, split, 8, Some(99)).unwrap() {
            let batch = batch.unwrap();
            assert!(batch.labels.len() <= 8);
            assert_eq!(batch.images.n, batch.labels.len());
            for (k, &i) in batch.indices.iter().enumerate() {
                assert_eq!(batch.labels[k], f64::from(m.samples[i].label));
            }
            seen.extend(&batch.indices);
        }
        seen.sort_unstable();
        assert_eq!(seen, m.split_indices(split), "{split}");
    }
    let a = stream_batches(&m, Split::Train, 8, Some(5)).unwrap().order().to_vec();
    let b = stream_batches(&m, Split::Train, 8, Some(5)).unwrap().order().to_vec();
    let c = stream_batches(&m, Split::Train, 8, Some(6)).unwrap().order().to_vec();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn validation_batching_arithmetic() {
    let samples = (0..4_374)
        .map(|i| ImageSample {
            path: PathBuf::from(format!("val/x/{i}.png")),
            label: (i % 2) as u8,
            structure_name: "x".into(),
            cell: GridCell {
                scale_idx: 0,
                rot_idx: 0,
                trans_idx: 0,
            },
            split: Split::Val,
        })
        .collect();
    let m = Manifest {
        root: PathBuf::from("unused"),
        seed: 0,
        split_mode: SplitMode::ByImage,
        grid: AugmentationGrid::full(),
        style: RenderStyle::default(),
        samples,
    };
    let stream = stream_batches(&m, Split::Val, 32, None).unwrap();
    assert_eq!(stream.batch_count(), 137);
    let sizes: Vec<usize> = stream.order().chunks(32).map(<[usize]>::len).collect();
    assert_eq!(sizes.iter().filter(|&&n| n == 32).count(), 136);
    assert_eq!(*sizes.last().unwrap(), 22);
}

#[test]
fn build_is_deterministic_across_job_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let one = build(a.path(), 7, BuildOptions { jobs: Some(1), ..Default::default() });
    let two = build(b.path(), 7, BuildOptions { jobs: Some(2), ..Default::default() });
    assert_eq!(one.samples, two.samples);
    assert_eq!(fs::read(one.manifest_path()).unwrap(), fs::read(two.manifest_path()).unwrap());
    assert_eq!(files(&one), files(&two));

    let c = tempfile::tempdir().unwrap();
    let other = build(c.path(), 8, BuildOptions::default());
    let splits = |m: &Manifest| m.samples.iter().map(|s| s.split).collect::<Vec<_>>();
    assert_ne!(splits(&one), splits(&other));
}

#[test]
fn structure_split_keeps_structures_whole() {
    let dir = tempfile::tempdir().unwrap();
    let m = build(dir.path(), 4, BuildOptions { split_mode: SplitMode::ByStructure, ..Default::default() });
    let mut per: BTreeMap<&str, Vec<Split>> = BTreeMap::new();
    for s in &m.samples {
        per.entry(&s.structure_name).or_default().push(s.split);
    }
    for (name, splits) in per {
        assert!(splits.iter().all(|&x| x == splits[0]), "{name}");
    }
    assert_eq!(Manifest::read(&m.manifest_path()).unwrap(), m);
}

#[test]
fn manifest_rejects_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let m = build(dir.path(), 5, BuildOptions::default());
    let text = fs::read_to_string(m.manifest_path()).unwrap();
    let broken = text.replacen(",train\n", ",nowhere\n", 1);
    let path = dir.path().join("broken.csv");
    fs::write(&path, broken).unwrap();
    let e = Manifest::read(&path).unwrap_err();
    assert!(e.to_string().contains("broken.csv"), "{e}");
}
