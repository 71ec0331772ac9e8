//! The `partition` command: score candidate parts with the resampled ELBO
//! and run the hierarchy or contiguous-run DP.

use anyhow::{bail, Result};
use gaqp::ensemble::{atomic_groups, bound_sum, partition_contiguous, partition_hierarchy, r_elbo, OlapTree};
use gaqp::model::{derive_seed, EnsembleModel, Model};
use gaqp::relation::{encode_dataset, EncodingMode, Relation};
use gaqp::vae::train;
use gaqp::vrs::{DEFAULT_MC_DRAWS, DEFAULT_PERCENTILE, DEFAULT_TARGET_ACCEPT};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::PartitionArgs;
use crate::commands::{save_model, train_config};
use crate::usage;

struct Scorer<'a> {
    relation: &'a Relation,
    args: &'a PartitionArgs,
    mode: EncodingMode,
}

impl Scorer<'_> {
    /// Loss summed over `rows` of a model trained on them; `stream`
    /// separates seeds.
    fn score(&self, rows: &[usize], stream: u64) -> Result<f64> {
        let sub = self.relation.select(rows);
        let data = encode_dataset(&sub, self.mode)?;
        let cfg = train_config(&self.args.train, derive_seed(self.args.seed, stream));
        let params = train::<f64>(&data, &cfg)?.params;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.args.seed, 1 << 32 | stream));
        let r = r_elbo(&params, &data, self.args.t, self.args.draws, &mut rng)?;
        if r.unreliable {
            eprintln!("warning: resampled ELBO on {} rows is unreliable ({} tuples skipped)", rows.len(), r.skipped);
        }
        if !r.score().is_finite() {
            bail!(
                "no finite resampled ELBO on a part of {} rows at T = {}; raise --T or --draws",
                rows.len(),
                self.args.t
            );
        }
        Ok(r.total())
    }
}

fn union(groups: &[&Vec<usize>]) -> Vec<usize> {
    let mut rows: Vec<usize> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    rows.sort_unstable();
    rows
}

pub fn run(a: PartitionArgs) -> Result<()> {
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let rel = Relation::load(&a.relation)?;
    let scorer = Scorer { relation: &rel, args: &a, mode: a.train.encoding.into() };

    // (attribute, value lists of the chosen parts, labels of the parts)
    let (attr, parts, labels) = if let Some(path) = &a.hierarchy {
        let tree = OlapTree::parse(&std::fs::read_to_string(path)?)?;
        let leaves = tree.leaves();
        let mut attr = None;
        let mut values = Vec::with_capacity(leaves.len());
        for &leaf in &leaves {
            let label = &tree.nodes[leaf].label;
            let (name, value) = label
                .split_once('=')
                .ok_or_else(|| usage(format!("hierarchy leaf `{label}` is not attribute=value")))?;
            let i = rel.attribute_index(name.trim()).ok_or_else(|| usage(format!("unknown attribute `{name}`")))?;
            if *attr.get_or_insert(i) != i {
                return Err(usage("hierarchy leaves must all name the same attribute"));
            }
            let v = rel.schema()[i]
                .index_of_label(value.trim())
                .ok_or_else(|| usage(format!("`{value}` is not a value of `{name}`")))?;
            values.push(v);
        }
        let attr = attr.expect("a tree has at least one leaf");
        let by_value = atomic_groups(&rel, attr);
        let empty = Vec::new();
        let leaf_rows: Vec<&Vec<usize>> = values
            .iter()
            .map(|v| by_value.iter().find(|g| g.0 == *v).map_or(&empty, |g| &g.1))
            .collect();
        if let Some(i) = leaf_rows.iter().position(|r| r.is_empty()) {
            bail!("hierarchy leaf `{}` has no rows", tree.nodes[leaves[i]].label);
        }
        let scores = if a.bound {
            let leaf_scores = leaf_rows
                .iter()
                .enumerate()
                .map(|(g, rows)| scorer.score(rows, leaves[g] as u64))
                .collect::<Result<Vec<f64>>>()?;
            tree.node_scores(&leaf_scores, &[])
        } else {
            (0..tree.nodes.len())
                .map(|v| {
                    let groups: Vec<&Vec<usize>> = tree.groups_under(v).iter().map(|&g| leaf_rows[g]).collect();
                    scorer.score(&union(&groups), v as u64)
                })
                .collect::<Result<Vec<f64>>>()?
        };
        println!("K\tobjective\tparts");
        for k in 1..=a.k {
            let plan = partition_hierarchy(&tree, k, &scores)?;
            println!("{k}\t{:.6}\t{}", plan.objective, plan.parts.len());
        }
        let plan = partition_hierarchy(&tree, a.k, &scores)?;
        if plan.k_exceeds_leaves {
            eprintln!("warning: K exceeds the {} leaves", tree.leaf_count());
        }
        let labels = plan.nodes.iter().map(|&v| tree.nodes[v].label.clone()).collect();
        let parts = plan.parts.iter().map(|p| p.iter().map(|&g| values[g]).collect()).collect();
        (attr, parts, labels)
    } else {
        let name = a.contiguous.as_deref().expect("clap enforces a layout");
        let attr = rel.attribute_index(name).ok_or_else(|| usage(format!("unknown attribute `{name}`")))?;
        let groups = atomic_groups(&rel, attr);
        let l = groups.len();
        let mut cost = vec![vec![f64::INFINITY; l + 1]; l + 1];
        if a.bound {
            let single = (0..l).map(|i| scorer.score(&groups[i].1, (i * (l + 1) + i + 1) as u64)).collect::<Result<Vec<_>>>()?;
            for i in 0..l {
                for j in i + 1..=l {
                    cost[i][j] = bound_sum(&single[i..j])?;
                }
            }
        } else {
            for i in 0..l {
                for j in i + 1..=l {
                    let members: Vec<&Vec<usize>> = groups[i..j].iter().map(|g| &g.1).collect();
                    cost[i][j] = scorer.score(&union(&members), (i * (l + 1) + j) as u64)?;
                }
            }
        }
        println!("K\tobjective");
        for k in 1..=a.k.min(l) {
            let plan = partition_contiguous(l, k, |i, j| cost[i][j])?;
            println!("{k}\t{:.6}", plan.objective);
        }
        let plan = partition_contiguous(l, a.k, |i, j| cost[i][j])?;
        if plan.k_reduced {
            eprintln!("warning: K reduced to the {l} non-empty values of `{name}`");
        }
        let schema = &rel.schema()[attr];
        let mut parts = Vec::new();
        let mut labels = Vec::new();
        for w in plan.boundaries.windows(2) {
            let run = &groups[w[0]..w[1]];
            parts.push(run.iter().map(|g| g.0).collect::<Vec<u32>>());
            labels.push(format!("{name}={}..{}", schema.label(run[0].0), schema.label(run[run.len() - 1].0)));
        }
        (attr, parts, labels)
    };

    println!("chosen parts:");
    for (label, values) in labels.iter().zip(&parts) {
        println!("  {label} ({} values)", values.len());
    }
    if let Some(out) = &a.out {
        let cfg = train_config(&a.train, a.seed);
        let mut ens = EnsembleModel::train(&rel, attr, &parts, scorer.mode, &cfg, a.train.reservoir)?;
        for (i, part) in ens.parts.iter_mut().enumerate() {
            let seed = derive_seed(a.seed, 2 << 32 | i as u64);
            part.model.fit_thresholds(DEFAULT_TARGET_ACCEPT, DEFAULT_MC_DRAWS, DEFAULT_PERCENTILE, seed)?;
        }
        save_model(&Model::Ensemble(ens), out)?;
    }
    Ok(())
}
