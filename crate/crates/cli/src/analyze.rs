use std::path::Path;

use outsync_core::graph::collapse_analysis;
use outsync_core::network::{
    check_condition_a, check_condition_b, check_cut_condition, check_injectivity, so3_quad_condition,
    so3_triangle_class,
};
use outsync_core::{Error, NetworkConfig, Space};
use serde_json::{json, Value};

use crate::scenario::network_from_value;
use crate::{write_json, CliResult};

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// SO(3) triangle classes of every 3-clique, vertices 1-based.
fn triangles(net: &NetworkConfig) -> CliResult<Vec<Value>> {
    let g = net.graph();
    let refs = net.fixed_refs()?;
    let y = |a: usize, b: usize| g.edge_index(a, b).map(|e| &refs[e]);
    let k = g.vertex_count();
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            for c in b + 1..k {
                if let (Some(ab), Some(ac), Some(bc)) = (y(a, b), y(a, c), y(b, c)) {
                    let class = so3_triangle_class(ab, ac, bc)?;
                    out.push(json!({ "vertices": [a + 1, b + 1, c + 1], "class": class }));
                }
            }
        }
    }
    Ok(out)
}

/// Four-agent condition on every 4-clique, with vertices in increasing order
/// playing the roles 1..4.
fn quads(net: &NetworkConfig) -> CliResult<Vec<Value>> {
    let g = net.graph();
    let refs = net.fixed_refs()?;
    let y = |a: usize, b: usize| g.edge_index(a, b).map(|e| &refs[e]);
    let k = g.vertex_count();
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            for c in b + 1..k {
                for d in c + 1..k {
                    let e = [y(a, b), y(a, c), y(a, d), y(b, c), y(b, d), y(c, d)];
                    if let [Some(ab), Some(ac), Some(ad), Some(bc), Some(bd), Some(_)] = e {
                        let verdict = match so3_quad_condition(ab, ac, ad, bc, bd) {
                            Ok(q) => serde_json::to_value(q).map_err(Error::from)?,
                            Err(err) => json!({ "verdict": "error", "reason": err.to_string() }),
                        };
                        out.push(json!({ "vertices": [a + 1, b + 1, c + 1, d + 1], "condition": verdict }));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One line per entry for small lists, otherwise counts per verdict.
fn print_verdicts(what: &str, items: &[Value], verdict: impl Fn(&Value) -> &Value) {
    if items.len() <= 6 {
        for it in items {
            println!("{what} {}: {}", it["vertices"], verdict(it).as_str().unwrap_or("?"));
        }
        return;
    }
    let mut counts = std::collections::BTreeMap::new();
    for it in items {
        *counts.entry(verdict(it).as_str().unwrap_or("?").to_string()).or_insert(0usize) += 1;
    }
    let parts: Vec<String> = counts.iter().map(|(k, v)| format!("{k} x{v}")).collect();
    println!("{what}s: {}", parts.join(", "));
}

pub fn run(config: &Value, out: &Path) -> CliResult<()> {
    let net = network_from_value(config)?;
    if net.is_time_varying() {
        return Err(Error::Config("analysis needs fixed reference vectors".into()).into());
    }
    let inj = check_injectivity(&net)?;
    let cut = check_cut_condition(&net)?;
    let a = check_condition_a(&net)?;
    let b = match net.space() {
        Space::SOn => Some(check_condition_b(&net)?),
        Space::Rn => None,
    };
    let so3 = net.space() == Space::SOn && net.dim() == 3;
    let tri = if so3 { triangles(&net)? } else { Vec::new() };
    let quad = if so3 { quads(&net)? } else { Vec::new() };
    let col = collapse_analysis(net.graph());

    println!("agents: {}  edges: {}  n: {}  space: {:?}", net.agent_count(), net.graph().edge_count(), net.dim(), net.space());
    println!("injective: {}", yes_no(inj.injective));
    println!("cut_condition: {} (min rank {}, required {})", yes_no(cut.holds), cut.min_rank, cut.required);
    println!("condition_A: {} (rank {} of {})", yes_no(a.holds), a.rank, a.required);
    if let Some(b) = &b {
        println!("condition_B: {} (rank {} of {})", yes_no(b.holds), b.rank, b.required);
    }
    print_verdicts("triangle", &tri, |t| &t["class"]);
    print_verdicts("quad", &quad, |q| &q["condition"]["verdict"]);
    println!("collapse: {}", if col.reducible { "single vertex" } else { "irreducible" });

    let report = json!({
        "agents": net.agent_count(),
        "n": net.dim(),
        "space": net.space(),
        "injectivity": inj,
        "cut_condition": cut,
        "condition_a": a,
        "condition_b": b,
        "triangles": tri,
        "quads": quad,
        "collapse": col,
    });
    let path = out.join("analysis.json");
    write_json(&path, &report)?;
    println!("wrote {}", path.display());
    Ok(())
}
