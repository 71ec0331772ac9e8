use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::estimate::selectivity;
use super::query::{Aggregate, CmpOp, Literal, Predicate, QueryAst};
use crate::error::{Error, Result};
use crate::relation::{AttributeSchema, Relation};

/// Largest domain used as a `GROUP BY` attribute.
pub const MAX_GROUP_DOMAIN: usize = 8;

/// Closed selectivity interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stratum {
    pub min: f64,
    pub max: f64,
}

impl Stratum {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.min && s <= self.max
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadQuery {
    pub text: String,
    pub selectivity: f64,
    pub stratum: usize,
    pub predicates: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub queries: Vec<WorkloadQuery>,
    /// Strata that ran out of attempts before reaching their quota.
    pub underfilled: Vec<usize>,
}

fn ordered(a: &AttributeSchema) -> bool {
    (0..a.domain_size() as u32).all(|i| a.numeric_value(i).is_some())
}

fn random_predicate<R: Rng>(a: &AttributeSchema, rng: &mut R) -> Predicate {
    let idx = rng.random_range(0..a.domain_size() as u32);
    let (op, value) = if ordered(a) {
        let op = *[CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge].choose(rng).unwrap();
        (op, Literal::Number(a.numeric_value(idx).unwrap()))
    } else {
        let op = if rng.random_bool(0.7) { CmpOp::Eq } else { CmpOp::Ne };
        (op, Literal::Text(a.label(idx)))
    };
    Predicate::Cmp { attribute: a.name.clone(), op, value }
}

fn random_query<R: Rng>(schema: &[AttributeSchema], table: &str, k: usize, rng: &mut R) -> QueryAst {
    let mut attrs: Vec<usize> = (0..schema.len()).collect();
    attrs.shuffle(rng);
    let used = &attrs[..k.min(attrs.len())];
    let mut preds: Vec<Predicate> = used.iter().map(|&a| random_predicate(&schema[a], rng)).collect();
    let filter = match preds.len() {
        0 => None,
        1 => preds.pop(),
        _ if rng.random_bool(0.25) => {
            let rest = preds.split_off(2);
            let or = Predicate::Or(preds);
            Some(if rest.is_empty() { or } else { Predicate::And(std::iter::once(or).chain(rest).collect()) })
        }
        _ => Some(Predicate::And(preds)),
    };
    let measures: Vec<usize> = (0..schema.len()).filter(|&a| ordered(&schema[a])).collect();
    let aggregate = if measures.is_empty() {
        Aggregate::Count
    } else {
        *[Aggregate::Avg, Aggregate::Sum, Aggregate::Count].choose(rng).unwrap()
    };
    let measure = match aggregate {
        Aggregate::Count => None,
        _ => Some(schema[*measures.choose(rng).unwrap()].name.clone()),
    };
    let group_candidates: Vec<usize> =
        attrs[used.len()..].iter().copied().filter(|&a| schema[a].domain_size() <= MAX_GROUP_DOMAIN).collect();
    let group_by = if !group_candidates.is_empty() && rng.random_bool(0.5) {
        vec![schema[*group_candidates.choose(rng).unwrap()].name.clone()]
    } else {
        Vec::new()
    };
    QueryAst { select: group_by.clone(), aggregate, measure, table: table.to_string(), filter, group_by }
}

/// Random aggregate queries spread evenly over the selectivity strata.
/// Within each stratum, predicate counts cycle through 1, 2, 3; aggregate
/// type and grouping are drawn at random. Each stratum gets `10 · count`
/// attempts before it is reported as under-filled.
pub fn generate_workload(
    relation: &Relation,
    table: &str,
    count: usize,
    strata: &[Stratum],
    seed: u64,
) -> Result<Workload> {
    if count == 0 || strata.is_empty() {
        return Err(Error::InvalidArgument("workload needs at least one query and one stratum".into()));
    }
    let schema = relation.schema();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queries = Vec::with_capacity(count);
    let mut underfilled = Vec::new();
    let max_preds = schema.len().clamp(1, 3);
    for (s, stratum) in strata.iter().enumerate() {
        let quota = count / strata.len() + usize::from(s < count % strata.len());
        let mut attempts = 0;
        let mut filled = 0;
        while filled < quota {
            if attempts == 10 * count {
                underfilled.push(s);
                break;
            }
            attempts += 1;
            let k = 1 + filled % max_preds;
            let ast = random_query(schema, table, k, &mut rng);
            let sel = selectivity(relation, &ast.bind(schema)?);
            if stratum.contains(sel) {
                queries.push(WorkloadQuery { text: ast.to_string(), selectivity: sel, stratum: s, predicates: k });
                filled += 1;
            }
        }
    }
    Ok(Workload { queries, underfilled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aqp::query::parse_query;

    fn relation() -> Relation {
        let schema = vec![
            AttributeSchema::categorical("a", (0..4).map(|i| format!("x{i}")).collect()),
            AttributeSchema::numeric("b", vec![1.0, 2.0, 3.0], vec![0.5, 1.5, 2.5, 3.5]),
            AttributeSchema::categorical("c", (0..10).map(|i| i.to_string()).collect()),
            AttributeSchema::categorical("d", vec!["p".into(), "q".into()]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = (0..2000)
            .map(|_| vec![rng.random_range(0..4), rng.random_range(0..4), rng.random_range(0..10), rng.random_range(0..2)])
            .collect();
        Relation::new(schema, rows).unwrap()
    }

    #[test]
    fn respects_stratum_and_parses() {
        let r = relation();
        let w = generate_workload(&r, "R", 10, &[Stratum::new(0.05, 1.0)], 3).unwrap();
        assert_eq!(w.queries.len(), 10);
        assert!(w.underfilled.is_empty());
        for q in &w.queries {
            assert!(q.selectivity >= 0.05);
            let b = parse_query(&q.text).unwrap().bind(r.schema()).unwrap();
            assert_eq!(selectivity(&r, &b), q.selectivity);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let r = relation();
        let s = [Stratum::new(0.0, 0.3), Stratum::new(0.3, 1.0)];
        assert_eq!(generate_workload(&r, "R", 20, &s, 9).unwrap(), generate_workload(&r, "R", 20, &s, 9).unwrap());
        assert_ne!(generate_workload(&r, "R", 20, &s, 9).unwrap(), generate_workload(&r, "R", 20, &s, 10).unwrap());
    }

    #[test]
    fn unreachable_stratum_is_flagged() {
        let r = relation();
        let w = generate_workload(&r, "R", 4, &[Stratum::new(2.0, 3.0)], 1).unwrap();
        assert!(w.queries.is_empty());
        assert_eq!(w.underfilled, vec![0]);
    }
}
