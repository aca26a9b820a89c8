//! CSV outputs: transforms, match vectors, cartographies, evaluation
//! reports and expert pairs.
//!
//! Scores are written in shortest round-trip form, undefined ones as `NA`.

use std::fmt::Write as _;
use std::path::Path;

use slicefinder_core::cartography::{
    heatmap, mean_matrix, EvaluationReport, ExpertPairs, NmiCartography, ScoreMatrix,
};
use slicefinder_core::matcher::{BestPerStrategy, StrategyBest};
use slicefinder_core::{
    LinearTransform2D, MatchResult, MatcherParams, StrategyKind, TransformKind,
};

use super::{read_text, sidecar, write_file, write_pgm, Pgm};
use crate::provenance::Provenance;
use crate::{Error, Result};

const TRANSFORM_HEADER: &str = "kind,m00,m01,m10,m11,tx,ty";
pub const BEST_TRANSFORMS_HEADER: &str = "s_e,strategy,s_t,nmi,kind,m00,m01,m10,m11,tx,ty";

fn csv_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::MalformedCsv {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn score(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"))
}

fn parse_score(s: &str) -> Option<Option<f64>> {
    match s.trim() {
        "NA" => Some(None),
        t => t.parse::<f64>().ok().filter(|x| x.is_finite()).map(Some),
    }
}

/// One line: kind tag, row-major matrix, translation; 17 significant digits.
pub fn format_transform(t: &LinearTransform2D) -> String {
    let m = t.matrix();
    let tr = t.translation();
    format!(
        "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
        t.kind().name(),
        m[0][0],
        m[0][1],
        m[1][0],
        m[1][1],
        tr[0],
        tr[1]
    )
}

pub fn parse_transform(line: &str) -> std::result::Result<LinearTransform2D, String> {
    let parts: Vec<&str> = line.trim().split(',').collect();
    if parts.len() != 7 {
        return Err(format!("expected 7 fields, got {}", parts.len()));
    }
    let kind: TransformKind = parts[0].parse().map_err(|e| format!("{e}"))?;
    let mut v = [0.0; 6];
    for (slot, p) in v.iter_mut().zip(&parts[1..]) {
        *slot = p.trim().parse().map_err(|_| format!("bad number '{p}'"))?;
    }
    LinearTransform2D::from_parts(kind, [[v[0], v[1]], [v[2], v[3]]], [v[4], v[5]])
        .map_err(|e| e.to_string())
}

pub fn write_transform(path: &Path, t: &LinearTransform2D) -> Result<()> {
    write_file(
        path,
        format!("{TRANSFORM_HEADER}\n{}\n", format_transform(t)),
    )
}

pub fn read_transform(path: &Path) -> Result<LinearTransform2D> {
    let text = read_text(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == TRANSFORM_HEADER => {}
        _ => {
            return Err(csv_err(
                path,
                1,
                format!("expected header '{TRANSFORM_HEADER}'"),
            ))
        }
    }
    let (i, line) = lines
        .next()
        .ok_or_else(|| csv_err(path, 2, "missing transform line"))?;
    parse_transform(line).map_err(|m| csv_err(path, i + 1, m))
}

/// Per-template-slice scores plus one `best:<strategy>` summary row per
/// strategy with an estimate.
pub fn save_match_csv(result: &MatchResult, provenance: &Provenance, path: &Path) -> Result<()> {
    let mut out = format!(
        "{}\ns_t_index,nmi_rigid,nmi_affine,nmi_mean,status\n",
        provenance.line()
    );
    for k in 0..result.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            result.z_start + k,
            score(result.nmi_rigid[k]),
            score(result.nmi_affine[k]),
            score(result.nmi_mean[k]),
            result.status(k).replace(',', ";")
        );
    }
    for s in StrategyKind::ALL {
        if let Some(b) = result.best.get(s) {
            let _ = writeln!(out, "best:{s},{},{:?},,summary", b.index, b.nmi);
        }
    }
    write_file(path, out)
}

fn format_matrix(out: &mut String, name: &str, m: &ScoreMatrix) {
    let _ = writeln!(out, "# matrix: {name}");
    out.push_str("s_e");
    for j in 0..m.cols() {
        let _ = write!(out, ",{j}");
    }
    out.push('\n');
    for i in 0..m.rows() {
        let _ = write!(out, "{i}");
        for v in m.row(i) {
            out.push(',');
            out.push_str(&score(*v));
        }
        out.push('\n');
    }
}

/// Rigid, affine and mean matrices, optionally only their first `rows` rows.
pub fn format_cartography_csv(
    carto: &NmiCartography,
    provenance: &Provenance,
    rows: Option<usize>,
) -> String {
    let mut out = provenance.line();
    out.push('\n');
    for s in StrategyKind::ALL {
        let m = carto.matrix(s);
        let n = rows.unwrap_or(m.rows()).min(m.rows());
        let head: Vec<Vec<Option<f64>>> = (0..n).map(|i| m.row(i).to_vec()).collect();
        match ScoreMatrix::from_rows(head) {
            Ok(part) => format_matrix(&mut out, s.name(), &part),
            Err(_) => {
                let _ = writeln!(out, "# matrix: {}", s.name());
            }
        }
    }
    out
}

pub fn save_cartography_csv(
    carto: &NmiCartography,
    provenance: &Provenance,
    path: &Path,
) -> Result<()> {
    write_file(path, format_cartography_csv(carto, provenance, None))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartographyTable {
    pub provenance: Option<Provenance>,
    pub rigid: ScoreMatrix,
    pub affine: ScoreMatrix,
    pub mean: ScoreMatrix,
}

impl CartographyTable {
    pub fn into_cartography(
        self,
        best: Vec<BestPerStrategy>,
        params: MatcherParams,
        strategy: StrategyKind,
    ) -> NmiCartography {
        NmiCartography {
            rigid: self.rigid,
            affine: self.affine,
            mean: self.mean,
            best,
            failures: Vec::new(),
            params,
            strategy,
        }
    }
}

pub fn parse_cartography_csv(text: &str, path: &Path) -> Result<CartographyTable> {
    let mut provenance = None;
    let mut blocks: Vec<(String, Vec<Vec<Option<f64>>>, usize)> = Vec::new();
    let mut expect_header = false;
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix("# matrix:") {
            blocks.push((name.trim().to_string(), Vec::new(), 0));
            expect_header = true;
            continue;
        }
        if line.starts_with("# slicefinder ") {
            provenance = Provenance::parse(line);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let Some((_, rows, cols)) = blocks.last_mut() else {
            return Err(csv_err(path, ln, "data before the first '# matrix:' line"));
        };
        let fields: Vec<&str> = line.split(',').collect();
        if expect_header {
            let ok = fields[0] == "s_e"
                && fields[1..]
                    .iter()
                    .enumerate()
                    .all(|(j, f)| f.trim().parse() == Ok(j));
            if !ok {
                return Err(csv_err(path, ln, "expected header 's_e,0,1,...'"));
            }
            *cols = fields.len() - 1;
            expect_header = false;
            continue;
        }
        if fields.len() != *cols + 1 || fields[0].trim().parse() != Ok(rows.len()) {
            return Err(csv_err(
                path,
                ln,
                format!("expected row {} with {} scores", rows.len(), cols),
            ));
        }
        let row = fields[1..]
            .iter()
            .map(|f| parse_score(f))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| csv_err(path, ln, "bad score"))?;
        rows.push(row);
    }
    let mut take = |name: &str| -> Result<ScoreMatrix> {
        let pos = blocks
            .iter()
            .position(|b| b.0 == name)
            .ok_or_else(|| csv_err(path, 0, format!("missing '{name}' matrix")))?;
        let (_, rows, _) = blocks.swap_remove(pos);
        ScoreMatrix::from_rows(rows).map_err(|e| csv_err(path, 0, format!("{name} matrix: {e}")))
    };
    let rigid = take("rigid")?;
    let affine = take("affine")?;
    let mean = take("mean")?;
    if mean != mean_matrix(&rigid, &affine)? {
        return Err(csv_err(
            path,
            0,
            "mean matrix is not the average of rigid and affine",
        ));
    }
    Ok(CartographyTable {
        provenance,
        rigid,
        affine,
        mean,
    })
}

/// Loads a cartography CSV and, when present, the best-transform table
/// written next to it.
pub fn load_cartography(path: &Path, transforms: Option<&Path>) -> Result<NmiCartography> {
    let table = parse_cartography_csv(&read_text(path)?, path)?;
    let n_e = table.rigid.rows();
    let best = match transforms {
        Some(t) => load_best_transforms(t, n_e)?,
        None => vec![BestPerStrategy::default(); n_e],
    };
    Ok(table.into_cartography(best, MatcherParams::default(), StrategyKind::Mean))
}

pub fn save_best_transforms(
    carto: &NmiCartography,
    provenance: &Provenance,
    path: &Path,
) -> Result<()> {
    let mut out = format!("{}\n{BEST_TRANSFORMS_HEADER}\n", provenance.line());
    for (i, best) in carto.best.iter().enumerate() {
        for s in StrategyKind::ALL {
            if let Some(b) = best.get(s) {
                let _ = writeln!(
                    out,
                    "{i},{s},{},{:?},{}",
                    b.index,
                    b.nmi,
                    format_transform(&b.transform)
                );
            }
        }
    }
    write_file(path, out)
}

pub fn load_best_transforms(path: &Path, n_e: usize) -> Result<Vec<BestPerStrategy>> {
    let text = read_text(path)?;
    let mut out = vec![BestPerStrategy::default(); n_e];
    let mut seen_header = false;
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != BEST_TRANSFORMS_HEADER {
                return Err(csv_err(
                    path,
                    ln,
                    format!("expected header '{BEST_TRANSFORMS_HEADER}'"),
                ));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = line.splitn(5, ',').collect();
        if fields.len() != 5 {
            return Err(csv_err(path, ln, "too few fields"));
        }
        let s_e: usize = fields[0]
            .parse()
            .map_err(|_| csv_err(path, ln, "bad s_e"))?;
        let strategy: StrategyKind = fields[1]
            .parse()
            .map_err(|_| csv_err(path, ln, "bad strategy"))?;
        let index: usize = fields[2]
            .parse()
            .map_err(|_| csv_err(path, ln, "bad s_t"))?;
        let nmi: f64 = fields[3]
            .parse()
            .map_err(|_| csv_err(path, ln, "bad nmi"))?;
        let transform = parse_transform(fields[4]).map_err(|m| csv_err(path, ln, m))?;
        let slot = out
            .get_mut(s_e)
            .ok_or_else(|| csv_err(path, ln, format!("s_e {s_e} out of range")))?;
        let best = Some(StrategyBest {
            index,
            nmi,
            transform,
        });
        match strategy {
            StrategyKind::Rigid => slot.rigid = best,
            StrategyKind::Affine => slot.affine = best,
            StrategyKind::Mean => slot.mean = best,
        }
    }
    Ok(out)
}

/// 16-bit heatmap of one matrix; the score range goes to a `.hdr` sidecar.
pub fn save_heatmap(carto: &NmiCartography, strategy: StrategyKind, path: &Path) -> Result<()> {
    let h = heatmap(carto.matrix(strategy)).map_err(|_| {
        Error::Export(format!(
            "{strategy} matrix has no defined score to scale a heatmap from"
        ))
    })?;
    write_pgm(
        path,
        &Pgm {
            width: h.width,
            height: h.height,
            maxval: 65535,
            samples: h.pixels,
        },
    )?;
    write_file(
        &sidecar(path, ".hdr"),
        format!(
            "score_min: {:?}\nscore_max: {:?}\nundefined_value: 0\n",
            h.min, h.max
        ),
    )
}

pub fn format_report_csv(report: &EvaluationReport, provenance: &Provenance) -> String {
    let mut out = provenance.line();
    out.push('\n');
    let f = report.expert_fit;
    let _ = writeln!(
        out,
        "# expert_fit\nslope,intercept,r2\n{:?},{:?},{:?}",
        f.slope, f.intercept, f.r2
    );
    for s in &report.strategies {
        let _ = writeln!(out, "# strategy: {}", s.strategy);
        out.push_str("metric,value\n");
        let opt = |v: Option<f64>| score(v);
        let _ = writeln!(out, "r2,{}", opt(s.regression.map(|r| r.r2)));
        let _ = writeln!(out, "slope,{}", opt(s.regression.map(|r| r.slope)));
        let _ = writeln!(out, "intercept,{}", opt(s.regression.map(|r| r.intercept)));
        let _ = writeln!(out, "delta_sn_mean,{}", opt(s.delta_sn_mean));
        let _ = writeln!(out, "delta_sn_std,{}", opt(s.delta_sn_std));
        let _ = writeln!(out, "evaluated_rows,{}", s.slices.len());
        let _ = writeln!(out, "excluded_rows,{}", s.excluded_rows.len());
        out.push_str("s_e,estimated,expert_predicted,delta_sn\n");
        for r in &s.slices {
            let _ = writeln!(
                out,
                "{},{},{:?},{}",
                r.s_e, r.estimated, r.expert_predicted, r.delta_sn
            );
        }
    }
    for (strategy, rows) in &report.dice {
        let _ = writeln!(out, "# dice: {strategy}");
        out.push_str("s_e,s_t,region,dice\n");
        for r in rows {
            for (label, d) in &r.dice.per_label {
                let _ = writeln!(out, "{},{},{label},{d:?}", r.s_e, r.s_t);
            }
            for label in &r.dice.excluded {
                let _ = writeln!(out, "{},{},{label},excluded", r.s_e, r.s_t);
            }
            let _ = writeln!(out, "{},{},mean,{}", r.s_e, r.s_t, score(r.dice.mean));
        }
    }
    out
}

pub fn save_report_csv(
    report: &EvaluationReport,
    provenance: &Provenance,
    path: &Path,
) -> Result<()> {
    write_file(path, format_report_csv(report, provenance))
}

/// Two columns `s_e,s_t_expert` under a mandatory header.
pub fn load_expert_pairs(path: &Path) -> Result<ExpertPairs> {
    let text = read_text(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, l)) if l.trim().replace(' ', "") == "s_e,s_t_expert" => {}
        _ => return Err(csv_err(path, 1, "expected header 's_e,s_t_expert'")),
    }
    let mut pairs = Vec::new();
    for (i, line) in lines {
        let parsed = line
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
        pairs.push(parsed.ok_or_else(|| csv_err(path, i + 1, format!("bad pair '{line}'")))?);
    }
    Ok(ExpertPairs::new(pairs, path.display().to_string())?)
}

pub fn save_expert_pairs(pairs: &ExpertPairs, path: &Path) -> Result<()> {
    let mut out = String::from("s_e,s_t_expert\n");
    for (e, t) in &pairs.pairs {
        let _ = writeln!(out, "{e},{t}");
    }
    write_file(path, out)
}
