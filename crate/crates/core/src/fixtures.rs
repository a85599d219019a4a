//! Reference models shared by unit tests, integration tests and the CLI.

use crate::model::{AssessedKnowledgeMap, ConditionalTable, KnowledgeMap, Variable};

/// Five-variable burglary/earthquake alarm network with binary `-`/`+`
/// variables.
pub fn holmes() -> AssessedKnowledgeMap {
    let vars = ["EARTHQUAKE", "BURGLARY", "ALARM", "RADIO NEWSCAST", "PHONE CALL"]
        .iter()
        .map(|n| Variable::binary(*n))
        .collect();
    let km = KnowledgeMap::new(vars).with_arcs(&[
        ("EARTHQUAKE", "ALARM"),
        ("BURGLARY", "ALARM"),
        ("EARTHQUAKE", "RADIO NEWSCAST"),
        ("ALARM", "PHONE CALL"),
    ]);
    let bin = |p: f64| vec![1.0 - p, p];
    AssessedKnowledgeMap::new(
        km,
        vec![
            ConditionalTable::new("EARTHQUAKE", &[], vec![bin(0.001)]),
            ConditionalTable::new("BURGLARY", &[], vec![bin(0.003)]),
            // Rows ordered (e-,b-), (e-,b+), (e+,b-), (e+,b+).
            ConditionalTable::new(
                "ALARM",
                &["EARTHQUAKE", "BURGLARY"],
                vec![bin(0.0003), bin(0.6), bin(0.5), bin(0.8)],
            ),
            ConditionalTable::new("RADIO NEWSCAST", &["EARTHQUAKE"], vec![bin(0.00002), bin(0.2)]),
            ConditionalTable::new("PHONE CALL", &["ALARM"], vec![bin(0.05), bin(0.3)]),
        ],
    )
}

/// Small structural networks over hypotheses `h1..h4` and binary features
/// `x`, `y`, `z`, with distinguished node `h`.
pub mod structures {
    use std::collections::BTreeSet;

    use crate::model::Variable;
    use crate::similarity::{
        Edge, HsMap, HypothesisSpecificNetwork, LocalMap, MapKind, Relevance, RelevanceSet, SimilarityGraph,
        SimilarityNetwork,
    };

    type Spec<'a> = (&'a str, &'a str, &'a [&'a str], &'a [(&'a str, &'a str)]);
    type EdgeRelevance<'a> = (&'a str, &'a str, &'a [(&'a str, Relevance)]);

    fn features(names: &[&str]) -> Vec<Variable> {
        names.iter().map(|n| Variable::binary(*n)).collect()
    }

    fn network(kind: MapKind, hyps: &[&str], feats: &[&str], maps: &[Spec<'_>]) -> SimilarityNetwork {
        let edges: Vec<(&str, &str)> = maps.iter().map(|(a, b, _, _)| (*a, *b)).collect();
        let nodes_for = |nodes: &[&str]| -> Vec<String> {
            if kind == MapKind::Comprehensive {
                feats.iter().map(|s| s.to_string()).collect()
            } else {
                nodes.iter().map(|s| s.to_string()).collect()
            }
        };
        SimilarityNetwork::new(
            kind,
            "h",
            SimilarityGraph::new(hyps, &edges),
            features(feats),
            maps.iter()
                .map(|(a, b, nodes, arcs)| {
                    let nodes = nodes_for(nodes);
                    let nodes: Vec<&str> = nodes.iter().map(String::as_str).collect();
                    LocalMap::new(Edge::new(*a, *b), &nodes, arcs)
                })
                .collect(),
        )
    }

    fn hs_network(
        hyps: &[&str],
        edges: &[(&str, &str)],
        feats: &[&str],
        maps: &[(&str, &[(&str, &str)])],
        relevance: &[EdgeRelevance<'_>],
    ) -> HypothesisSpecificNetwork {
        HypothesisSpecificNetwork {
            distinguished: "h".into(),
            graph: SimilarityGraph::new(hyps, edges),
            variables: features(feats),
            hs_maps: maps
                .iter()
                .map(|(h, arcs)| HsMap {
                    hypothesis: h.to_string(),
                    arcs: arcs
                        .iter()
                        .map(|(a, b)| (a.to_string(), b.to_string()))
                        .collect::<BTreeSet<_>>(),
                })
                .collect(),
            relevance: relevance
                .iter()
                .map(|(a, b, rs)| RelevanceSet {
                    edge: Edge::new(*a, *b),
                    assertions: rs.iter().map(|(y, r)| (y.to_string(), *r)).collect(),
                })
                .collect(),
        }
    }

    use Relevance::{Equal, Unequal};

    /// Three hypotheses; `x -> y` only under h1 and `z -> y` only under h3.
    /// Feature `z` is irrelevant to h1/h2 and `x` to h2/h3.
    pub fn three_hypothesis_hs() -> HypothesisSpecificNetwork {
        hs_network(
            &["h1", "h2", "h3"],
            &[("h1", "h2"), ("h2", "h3")],
            &["x", "y", "z"],
            &[("h1", &[("x", "y")]), ("h2", &[]), ("h3", &[("z", "y")])],
            &[
                ("h1", "h2", &[("x", Unequal), ("z", Equal)]),
                ("h2", "h3", &[("x", Equal), ("z", Unequal)]),
            ],
        )
    }

    /// Chain where only h3's map carries `x -> y`.
    pub fn arc_only_in_last_hs() -> HypothesisSpecificNetwork {
        hs_network(
            &["h1", "h2", "h3"],
            &[("h1", "h2"), ("h2", "h3")],
            &["x", "y"],
            &[("h1", &[]), ("h2", &[]), ("h3", &[("x", "y")])],
            &[
                ("h1", "h2", &[("x", Unequal), ("y", Equal)]),
                ("h2", "h3", &[("x", Equal)]),
            ],
        )
    }

    /// Triangle asserting equality for `x` on two edges and inequality on
    /// the third.
    pub fn equality_triangle_hs() -> HypothesisSpecificNetwork {
        hs_network(
            &["h1", "h2", "h3"],
            &[("h1", "h2"), ("h2", "h3"), ("h1", "h3")],
            &["x"],
            &[("h1", &[]), ("h2", &[]), ("h3", &[])],
            &[
                ("h1", "h2", &[("x", Equal)]),
                ("h2", "h3", &[("x", Equal)]),
                ("h1", "h3", &[("x", Unequal)]),
            ],
        )
    }

    /// Consistent comprehensive chain whose two local maps share `x -> y`.
    pub fn shared_arc_chain() -> SimilarityNetwork {
        network(
            MapKind::Comprehensive,
            &["h1", "h2", "h3"],
            &["x", "y"],
            &[
                ("h1", "h2", &[], &[("h", "x"), ("h", "y"), ("x", "y")]),
                ("h2", "h3", &[], &[("h", "x"), ("x", "y")]),
            ],
        )
    }

    /// Comprehensive chain where h1/h2 holds `x -> y` without `h -> y` while
    /// h2/h3 lacks the arc.
    pub fn unsupported_arc_chain() -> SimilarityNetwork {
        network(
            MapKind::Comprehensive,
            &["h1", "h2", "h3"],
            &["x", "y"],
            &[
                ("h1", "h2", &[], &[("h", "x"), ("x", "y")]),
                ("h2", "h3", &[], &[("h", "x"), ("h", "y")]),
            ],
        )
    }

    /// Comprehensive triangle where `h -> x` appears on one edge only.
    pub fn lone_relevance_triangle() -> SimilarityNetwork {
        network(
            MapKind::Comprehensive,
            &["h1", "h2", "h3"],
            &["x"],
            &[
                ("h1", "h2", &[], &[]),
                ("h2", "h3", &[], &[]),
                ("h1", "h3", &[], &[("h", "x")]),
            ],
        )
    }

    /// Consistent ordinary chain; `y` is missing from h1/h2.
    pub fn partial_ordinary_chain() -> SimilarityNetwork {
        network(
            MapKind::Ordinary,
            &["h1", "h2", "h3"],
            &["x", "y"],
            &[
                ("h1", "h2", &["x"], &[("h", "x")]),
                ("h2", "h3", &["x", "y"], &[("h", "x"), ("h", "y"), ("x", "y")]),
            ],
        )
    }

    /// Ordinary four-hypothesis chain whose outer maps each miss one end of
    /// the middle map's `x -> y`.
    pub fn split_endpoint_chain() -> SimilarityNetwork {
        network(
            MapKind::Ordinary,
            &["h1", "h2", "h3", "h4"],
            &["x", "y"],
            &[
                ("h1", "h2", &["x"], &[("h", "x")]),
                ("h2", "h3", &["x", "y"], &[("h", "x"), ("h", "y"), ("x", "y")]),
                ("h3", "h4", &["y"], &[("h", "y")]),
            ],
        )
    }

    /// Ordinary network that is consistent when `x` and `y` are logically
    /// equivalent: `z` hangs off `x` in one map and off `y` in the other.
    pub fn equivalent_features() -> SimilarityNetwork {
        network(
            MapKind::Ordinary,
            &["h1", "h2", "h3"],
            &["x", "y", "z"],
            &[
                ("h1", "h2", &["x", "y", "z"], &[("h", "x"), ("x", "y"), ("x", "z")]),
                ("h2", "h3", &["x", "y", "z"], &[("h", "x"), ("x", "y"), ("y", "z")]),
            ],
        )
    }

    /// Two ordinary maps whose union has `x -> y` and `z` depending on `h`
    /// alone.
    pub fn two_map_union() -> SimilarityNetwork {
        network(
            MapKind::Ordinary,
            &["h1", "h2", "h3"],
            &["x", "y", "z"],
            &[
                ("h1", "h2", &["x", "y", "z"], &[("h", "x"), ("x", "y"), ("h", "z")]),
                ("h2", "h3", &["z"], &[("h", "z")]),
            ],
        )
    }

    /// Comprehensive chain where `x -> y` is detached from `h` in h1/h2 but
    /// attached in h2/h3.
    pub fn detached_arc_comprehensive() -> SimilarityNetwork {
        network(
            MapKind::Comprehensive,
            &["h1", "h2", "h3"],
            &["x", "y", "z"],
            &[
                ("h1", "h2", &[], &[("x", "y"), ("h", "z")]),
                ("h2", "h3", &[], &[("x", "y"), ("h", "y")]),
            ],
        )
    }

    /// Ordinary counterpart of [`detached_arc_comprehensive`].
    pub fn detached_arc_ordinary() -> SimilarityNetwork {
        network(
            MapKind::Ordinary,
            &["h1", "h2", "h3"],
            &["x", "y", "z"],
            &[
                ("h1", "h2", &["z"], &[("h", "z")]),
                ("h2", "h3", &["x", "y"], &[("x", "y"), ("h", "y")]),
            ],
        )
    }
}

/// Abdominal-pain networks over NORMAL, APPI and RUPTURED ECTOPIC with
/// binary findings; distinguished node `h`.
pub mod multi_disease {
    use crate::model::{AssessedKnowledgeMap, ConditionalTable, KnowledgeMap, Variable};
    use crate::multihyp::AssessedNetwork;
    use crate::similarity::{Edge, LocalMap, MapKind, SimilarityGraph, SimilarityNetwork};

    const HYPOTHESES: [&str; 3] = ["NORMAL", "APPI", "RUPTURED ECTOPIC"];
    const FINDINGS: [&str; 3] = ["ANOREXIA", "PERITONITIS", "VAGINAL BLEEDING"];

    fn global() -> AssessedKnowledgeMap {
        let mut vars = vec![Variable::new("h", &HYPOTHESES)];
        vars.extend(FINDINGS.iter().map(|f| Variable::binary(*f)));
        let arcs: Vec<(&str, &str)> = FINDINGS.iter().map(|f| ("h", *f)).collect();
        let km = KnowledgeMap::new(vars).with_arcs(&arcs).with_distinguished("h");
        let rows = |p: [f64; 3]| p.iter().map(|q| vec![1.0 - q, *q]).collect::<Vec<_>>();
        AssessedKnowledgeMap::new(
            km,
            vec![
                ConditionalTable::new("h", &[], vec![vec![0.9, 0.06, 0.04]]),
                ConditionalTable::new("ANOREXIA", &["h"], rows([0.1, 0.8, 0.1])),
                ConditionalTable::new("PERITONITIS", &["h"], rows([0.02, 0.6, 0.7])),
                ConditionalTable::new("VAGINAL BLEEDING", &["h"], rows([0.05, 0.05, 0.9])),
            ],
        )
    }

    fn map(a: &str, b: &str, nodes: &[&str]) -> LocalMap {
        let arcs: Vec<(&str, &str)> = nodes.iter().map(|n| ("h", *n)).collect();
        LocalMap::new(Edge::new(a, b), nodes, &arcs)
    }

    fn assemble(edges: &[(&str, &str)], maps: Vec<LocalMap>) -> AssessedNetwork {
        AssessedNetwork {
            network: SimilarityNetwork::new(
                MapKind::Ordinary,
                "h",
                SimilarityGraph::new(&HYPOTHESES, edges),
                FINDINGS.iter().map(|f| Variable::binary(*f)).collect(),
                maps,
            ),
            global: global(),
        }
    }

    /// Both diseases linked to NORMAL.
    pub fn star() -> AssessedNetwork {
        assemble(
            &[("APPI", "NORMAL"), ("NORMAL", "RUPTURED ECTOPIC")],
            vec![
                map("APPI", "NORMAL", &["ANOREXIA", "PERITONITIS"]),
                map("NORMAL", "RUPTURED ECTOPIC", &["PERITONITIS", "VAGINAL BLEEDING"]),
            ],
        )
    }

    /// APPI is linked only to RUPTURED ECTOPIC.
    pub fn chain() -> AssessedNetwork {
        assemble(
            &[("APPI", "RUPTURED ECTOPIC"), ("NORMAL", "RUPTURED ECTOPIC")],
            vec![
                map("APPI", "RUPTURED ECTOPIC", &FINDINGS),
                map("NORMAL", "RUPTURED ECTOPIC", &["PERITONITIS", "VAGINAL BLEEDING"]),
            ],
        )
    }

    /// One disease `D` and one finding `F`.
    pub fn pair() -> AssessedNetwork {
        let km = KnowledgeMap::new(vec![Variable::new("h", &["NORMAL", "D"]), Variable::binary("F")])
            .with_arcs(&[("h", "F")])
            .with_distinguished("h");
        AssessedNetwork {
            network: SimilarityNetwork::new(
                MapKind::Ordinary,
                "h",
                SimilarityGraph::new(&["NORMAL", "D"], &[("NORMAL", "D")]),
                vec![Variable::binary("F")],
                vec![map("D", "NORMAL", &["F"])],
            ),
            global: AssessedKnowledgeMap::new(
                km,
                vec![
                    ConditionalTable::new("h", &[], vec![vec![0.95, 0.05]]),
                    ConditionalTable::new("F", &["h"], vec![vec![0.8, 0.2], vec![0.3, 0.7]]),
                ],
            ),
        }
    }
}

/// Shipped bundle documents.
pub mod bundles {
    /// Five sore-throat diseases over seven findings; consistent.
    pub const SORE_THROAT: &str = include_str!("../fixtures/sore_throat.json");
    /// Ordinary chain whose outer maps each miss one end of `x -> y`;
    /// inconsistent.
    pub const SPLIT_ENDPOINT_CHAIN: &str = include_str!("../fixtures/split_endpoint_chain.json");
    /// Two hypotheses and one finding with an asymmetric utility matrix.
    pub const LOSS_PAIR: &str = include_str!("../fixtures/loss_pair.json");
    /// Cases for [`LOSS_PAIR`] whose gold distribution is the prior.
    pub const LOSS_PAIR_CASES: &str = include_str!("../fixtures/loss_pair_cases.json");
    /// NORMAL, APPI and RUPTURED ECTOPIC without an APPI–NORMAL edge.
    pub const ABDOMINAL_PAIN: &str = include_str!("../fixtures/abdominal_pain.json");
}
