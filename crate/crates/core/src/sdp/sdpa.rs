//! SDPA sparse format (`.dat-s`).
//!
//! The moment vector `w` is the SDPA variable vector, so the objective line is
//! `c` and every PSD block has a zero constant matrix. Equality rows
//! `e.w = f` become pairs of diagonal entries `e.w - f >= 0`,
//! `-e.w + f >= 0` of one trailing LP block of size `-2 * rows`.
//!
//! Leading comment lines (`"` or `*`) carry what the numeric body cannot:
//! a content hash, the sense, the order, the monomial of every moment and the
//! block labels. Files without them import with placeholder metadata.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::expr::Sense;
use crate::moment::{LinearForm, LinearRow, LmiRelaxation, MatrixPencil, PencilLabel, RowOrigin};
use crate::poly::Monomial;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdpaError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn perr<T>(line: usize, msg: impl Into<String>) -> Result<T, SdpaError> {
    Err(SdpaError::Parse { line, msg: msg.into() })
}

fn exps(m: &Monomial) -> String {
    m.exponents().iter().map(u32::to_string).collect::<Vec<_>>().join(",")
}

fn sense_name(s: Sense) -> &'static str {
    match s {
        Sense::Minimize => "minimize",
        Sense::Maximize => "maximize",
    }
}

pub fn export_sdpa(r: &LmiRelaxation) -> String {
    let m = r.n_moments();
    let n_psd = r.blocks.len();
    let n_eq = r.eq_rows.len();
    let n_blocks = n_psd + usize::from(n_eq > 0);

    let mut entries: Vec<(usize, usize, usize, usize, f64)> = Vec::new();
    for (b, pencil) in r.blocks.iter().enumerate() {
        for i in 0..pencil.size {
            for j in i..pencil.size {
                for &(k, a) in pencil.entry(i, j) {
                    if a != 0.0 {
                        entries.push((k + 1, b + 1, i + 1, j + 1, a));
                    }
                }
            }
        }
    }
    let lp = n_psd + 1;
    for (t, row) in r.eq_rows.iter().enumerate() {
        let (d1, d2) = (2 * t + 1, 2 * t + 2);
        for &(k, a) in &row.coeffs {
            if a != 0.0 {
                entries.push((k + 1, lp, d1, d1, a));
                entries.push((k + 1, lp, d2, d2, -a));
            }
        }
        if row.rhs != 0.0 {
            entries.push((0, lp, d1, d1, row.rhs));
            entries.push((0, lp, d2, d2, -row.rhs));
        }
    }
    entries.sort_by_key(|e| (e.0, e.1, e.2, e.3));

    let mut c = vec![0.0; m];
    for &(k, a) in &r.objective {
        c[k] += a;
    }
    let mut body = String::new();
    let _ = writeln!(body, "{m}");
    let _ = writeln!(body, "{n_blocks}");
    let mut sizes: Vec<String> = r.blocks.iter().map(|p| p.size.to_string()).collect();
    if n_eq > 0 {
        sizes.push(format!("-{}", 2 * n_eq));
    }
    let _ = writeln!(body, "{}", sizes.join(" "));
    let _ = writeln!(body, "{}", c.iter().map(|v| format!("{}", v + 0.0)).collect::<Vec<_>>().join(" "));
    for (k, b, i, j, v) in entries {
        let _ = writeln!(body, "{k} {b} {i} {j} {v}");
    }

    let hash = hex::encode(Sha256::digest(body.as_bytes()));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "\"semialg relaxation order={} vars={} offset={} sense={}",
        r.order,
        r.n_vars,
        r.flat_offset,
        sense_name(r.sense)
    );
    let _ = writeln!(out, "\"sha256={hash}");
    let _ = writeln!(out, "\"monomials {}", r.w_index.iter().map(exps).collect::<Vec<_>>().join(" "));
    let _ = writeln!(out, "\"blocks {}", r.blocks.iter().map(|p| p.label.to_string()).collect::<Vec<_>>().join(" "));
    if let Some(cl) = &r.cliques {
        let txt = cl
            .iter()
            .map(|c| c.iter().map(usize::to_string).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(out, "\"cliques {txt}");
    }
    out.push_str(&body);
    out
}

#[derive(Default)]
struct Meta {
    order: u32,
    n_vars: Option<usize>,
    offset: u32,
    sense: Option<Sense>,
    monomials: Option<Vec<Monomial>>,
    labels: Option<Vec<PencilLabel>>,
    cliques: Option<Vec<Vec<usize>>>,
}

fn parse_meta(line_no: usize, text: &str, meta: &mut Meta) -> Result<(), SdpaError> {
    let mut words = text.split_whitespace();
    match words.next() {
        Some("semialg") => {
            for w in words {
                if let Some((k, v)) = w.split_once('=') {
                    let bad = || SdpaError::Parse { line: line_no, msg: format!("bad header field `{w}`") };
                    match k {
                        "order" => meta.order = v.parse().map_err(|_| bad())?,
                        "vars" => meta.n_vars = Some(v.parse().map_err(|_| bad())?),
                        "offset" => meta.offset = v.parse().map_err(|_| bad())?,
                        "sense" => {
                            meta.sense = Some(match v {
                                "minimize" => Sense::Minimize,
                                "maximize" => Sense::Maximize,
                                _ => return Err(bad()),
                            })
                        }
                        _ => {}
                    }
                }
            }
        }
        Some("monomials") => {
            let mut ms = Vec::new();
            for w in words {
                let e: Result<Vec<u32>, _> = w.split(',').map(str::parse).collect();
                match e {
                    Ok(e) => ms.push(Monomial::new(e)),
                    Err(_) => return perr(line_no, format!("bad monomial `{w}`")),
                }
            }
            meta.monomials = Some(ms);
        }
        Some("blocks") => {
            let labels: Result<Vec<PencilLabel>, String> = words.map(str::parse).collect();
            meta.labels = Some(labels.map_err(|msg| SdpaError::Parse { line: line_no, msg })?);
        }
        Some("cliques") => {
            let mut cl = Vec::new();
            for part in words.collect::<Vec<_>>().join("").split(';') {
                let c: Result<Vec<usize>, _> = part.split(',').map(str::parse).collect();
                cl.push(c.map_err(|_| SdpaError::Parse { line: line_no, msg: "bad clique list".into() })?);
            }
            meta.cliques = Some(cl);
        }
        _ => {}
    }
    Ok(())
}

struct Tokens {
    v: Vec<(usize, String)>,
    pos: usize,
    last_line: usize,
}

impl Tokens {
    fn next(&mut self, what: &str) -> Result<(usize, String), SdpaError> {
        let t = self.v.get(self.pos).cloned();
        self.pos += 1;
        t.ok_or(SdpaError::Parse {
            line: self.last_line,
            msg: format!("unexpected end of file, expected {what}"),
        })
    }

    fn peek_line(&self) -> Option<usize> {
        self.v.get(self.pos).map(|t| t.0)
    }
}

/// Reads a `.dat-s` file back into a relaxation (structure only: pencil
/// origins and row origins are not recoverable).
pub fn import_sdpa(text: &str) -> Result<LmiRelaxation, SdpaError> {
    let mut meta = Meta {
        offset: 1,
        ..Meta::default()
    };
    let mut tokens: Vec<(usize, String)> = Vec::new();
    let mut in_header = true;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = raw.trim();
        if in_header && (trimmed.starts_with('"') || trimmed.starts_with('*')) {
            parse_meta(line_no, &trimmed[1..], &mut meta)?;
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        in_header = false;
        let cleaned: String = trimmed
            .chars()
            .map(|ch| if matches!(ch, '{' | '}' | '(' | ')' | ',') { ' ' } else { ch })
            .collect();
        tokens.extend(cleaned.split_whitespace().map(|t| (line_no, t.to_string())));
    }
    let last_line = text.lines().count().max(1);
    let mut toks = Tokens { v: tokens, pos: 0, last_line };
    let int = |(line, t): (usize, String), what: &str| -> Result<i64, SdpaError> {
        t.parse::<i64>().or_else(|_| perr(line, format!("expected {what}, found `{t}`")))
    };

    let tok = toks.next("constraint count")?;
    let line_m = tok.0;
    let m = int(tok, "constraint count")?;
    if m < 1 {
        return perr(line_m, "constraint count must be positive");
    }
    let m = m as usize;
    let tok = toks.next("block count")?;
    let line_nb = tok.0;
    let nb = int(tok, "block count")?;
    if nb < 1 {
        return perr(line_nb, "block count must be positive");
    }
    let nb = nb as usize;
    let mut sizes = Vec::with_capacity(nb);
    for _ in 0..nb {
        let tok = toks.next("block size")?;
        let line = tok.0;
        let s = int(tok, "block size")?;
        if s == 0 {
            return perr(line, "block size must be nonzero");
        }
        sizes.push(s);
    }
    let mut c = vec![0.0; m];
    for ck in c.iter_mut() {
        let (line, t) = toks.next("objective coefficient")?;
        *ck = t.parse::<f64>().or_else(|_| perr(line, format!("expected number, found `{t}`")))?;
    }

    // psd[b][(i, j)] -> k -> value, i <= j
    let mut psd: Vec<BTreeMap<(usize, usize), BTreeMap<usize, f64>>> = vec![BTreeMap::new(); nb];
    // lp[(b, d)] -> (k -> value, constant)
    let mut lp: BTreeMap<(usize, usize), (BTreeMap<usize, f64>, f64)> = BTreeMap::new();
    while let Some(line) = toks.peek_line() {
        let matno = int(toks.next("matrix number")?, "matrix number")?;
        let blk = int(toks.next("block number")?, "block number")?;
        let mut i = int(toks.next("row index")?, "row index")?;
        let mut j = int(toks.next("column index")?, "column index")?;
        let (vline, vt) = toks.next("value")?;
        let v: f64 = vt.parse().or_else(|_| perr(vline, format!("expected number, found `{vt}`")))?;
        if matno < 0 || matno as usize > m {
            return perr(line, format!("matrix number {matno} out of range"));
        }
        if blk < 1 || blk as usize > nb {
            return perr(line, format!("block number {blk} out of range"));
        }
        let b = blk as usize - 1;
        let size = sizes[b].unsigned_abs() as i64;
        if i < 1 || j < 1 || i > size || j > size {
            return perr(line, format!("index ({i}, {j}) outside block {blk}"));
        }
        if i > j {
            std::mem::swap(&mut i, &mut j);
        }
        let (i, j) = (i as usize - 1, j as usize - 1);
        if sizes[b] < 0 {
            if i != j {
                return perr(line, "off-diagonal entry in an LP block");
            }
            let e = lp.entry((b, i)).or_default();
            if matno == 0 {
                e.1 += v;
            } else {
                *e.0.entry(matno as usize - 1).or_insert(0.0) += v;
            }
        } else {
            if matno == 0 {
                if v != 0.0 {
                    return perr(line, "constant terms in PSD blocks are not supported");
                }
                continue;
            }
            *psd[b].entry((i, j)).or_default().entry(matno as usize - 1).or_insert(0.0) += v;
        }
    }

    let mut blocks = Vec::new();
    let mut rows = Vec::new();
    let mut labels = meta.labels.clone().map(|l| l.into_iter());
    for (b, &s) in sizes.iter().enumerate() {
        if s < 0 {
            let n = s.unsigned_abs() as usize;
            if n % 2 != 0 {
                return perr(3, format!("LP block {} must have even size", b + 1));
            }
            for t in 0..n / 2 {
                let empty = (BTreeMap::new(), 0.0);
                let pos_part = lp.get(&(b, 2 * t)).unwrap_or(&empty);
                let neg_part = lp.get(&(b, 2 * t + 1)).unwrap_or(&empty);
                let negated: BTreeMap<usize, f64> = neg_part.0.iter().map(|(&k, &v)| (k, -v)).collect();
                if pos_part.0 != negated || pos_part.1 != -neg_part.1 {
                    return perr(3, format!("LP block {} rows {} and {} are not an equality pair", b + 1, 2 * t + 1, 2 * t + 2));
                }
                rows.push(LinearRow {
                    coeffs: pos_part.0.iter().map(|(&k, &v)| (k, v)).collect(),
                    rhs: pos_part.1,
                    origin: RowOrigin::Imported,
                });
            }
        } else {
            let n = s as usize;
            let mut entries = vec![LinearForm::new(); n * n];
            for (&(i, j), form) in &psd[b] {
                let f: LinearForm = form.iter().filter(|(_, &v)| v != 0.0).map(|(&k, &v)| (k, v)).collect();
                entries[i * n + j] = f.clone();
                entries[j * n + i] = f;
            }
            let label = match labels.as_mut().and_then(Iterator::next) {
                Some(l) => l,
                None => PencilLabel::Block(blocks.len()),
            };
            blocks.push(MatrixPencil {
                label,
                size: n,
                entries,
                origin: None,
            });
        }
    }

    let w_index = match meta.monomials {
        Some(ms) if ms.len() == m => ms,
        Some(ms) => return perr(1, format!("header lists {} monomials for {m} variables", ms.len())),
        None => (0..m).map(|k| Monomial::var(m, k)).collect(),
    };
    let n_vars = meta.n_vars.unwrap_or_else(|| w_index.first().map_or(0, Monomial::n_vars));
    let objective: LinearForm = c.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(k, &v)| (k, v)).collect();
    let mut r = LmiRelaxation::new(
        meta.order,
        n_vars,
        w_index,
        blocks,
        rows,
        objective,
        meta.sense.unwrap_or(Sense::Minimize),
        meta.offset,
    );
    r.cliques = meta.cliques;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_problem;
    use crate::lift::build_problem;
    use crate::moment::build_relaxation;

    fn ex1() -> LmiRelaxation {
        let mut p = parse_problem(
            "vars x1 x2; maximize abs(x1)*x2 - x1^2; x1^2 + x2^2 == 1; box x1 in [-1,1]; box x2 in [-1,1];",
        )
        .unwrap();
        build_relaxation(&build_problem(&mut p, None).unwrap(), 2).unwrap()
    }

    fn body(text: &str) -> Vec<&str> {
        text.lines().filter(|l| !l.starts_with('"')).collect()
    }

    #[test]
    fn two_by_two_layout() {
        let text = export_sdpa(&crate::sdp::tests::two_by_two());
        let lines = body(&text);
        assert_eq!(lines[0], "2");
        assert_eq!(lines[1], "2");
        assert_eq!(lines[2], "2 -2");
        assert_eq!(lines[3], "0 1");
        assert!(lines.contains(&"1 1 1 1 1"));
        assert!(lines.contains(&"1 1 2 2 1"));
        assert!(lines.contains(&"2 1 1 2 1"));
        assert!(lines.contains(&"0 2 1 1 1"));
        assert!(lines.contains(&"0 2 2 2 -1"));
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let r = ex1();
        let a = export_sdpa(&r);
        let back = import_sdpa(&a).unwrap();
        assert_eq!(back.w_index, r.w_index);
        assert_eq!(back.eq_rows.len(), r.eq_rows.len());
        for (x, y) in back.blocks.iter().zip(&r.blocks) {
            assert_eq!(x.entries, y.entries);
            assert_eq!(x.label, y.label);
        }
        assert_eq!(export_sdpa(&back), a);
    }

    #[test]
    fn header_hash_matches_body() {
        let text = export_sdpa(&ex1());
        let hash_line = text.lines().find(|l| l.starts_with("\"sha256=")).unwrap();
        let body_text: String = body(&text).iter().map(|l| format!("{l}\n")).collect();
        assert_eq!(&hash_line[8..], hex::encode(Sha256::digest(body_text.as_bytes())));
    }

    #[test]
    fn whitespace_variant_is_canonicalized() {
        let text = export_sdpa(&crate::sdp::tests::two_by_two());
        let messy: String = text
            .lines()
            .map(|l| {
                if l.starts_with('"') {
                    format!("{l}\n")
                } else {
                    format!("  {}  \n\n", l.replace(' ', "\t "))
                }
            })
            .collect();
        let messy = messy.replacen("2 -2", "{2, -2}", 1);
        assert_eq!(export_sdpa(&import_sdpa(&messy).unwrap()), text);
    }

    #[test]
    fn malformed_block_count_reports_line_two() {
        let err = import_sdpa("2\nx\n2\n0 1\n").unwrap_err();
        assert!(matches!(err, SdpaError::Parse { line: 2, .. }), "{err:?}");
        let err = import_sdpa("2\n0\n2\n0 1\n").unwrap_err();
        assert!(matches!(err, SdpaError::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn rejects_constant_in_psd_block() {
        let err = import_sdpa("1\n1\n2\n1\n0 1 1 1 1\n1 1 1 2 1\n").unwrap_err();
        assert!(matches!(err, SdpaError::Parse { line: 5, .. }), "{err:?}");
    }

    #[test]
    fn plain_file_without_header_imports() {
        let r = import_sdpa("2\n2\n2 -2\n0 1\n1 1 1 1 1\n1 1 2 2 1\n2 1 1 2 1\n1 2 1 1 1\n1 2 2 2 -1\n0 2 1 1 1\n0 2 2 2 -1\n").unwrap();
        assert_eq!(r.blocks.len(), 1);
        assert_eq!(r.blocks[0].label, PencilLabel::Block(0));
        assert_eq!(r.eq_rows.len(), 1);
        let sol = crate::sdp::solve(&r, 1e-8, 100).unwrap();
        assert!((sol.objective + 1.0).abs() < 1e-6);
    }

    #[test]
    fn moment_block_only_without_equalities() {
        let mut r = crate::sdp::tests::two_by_two();
        r.eq_rows.clear();
        let text = export_sdpa(&r);
        let lines = body(&text);
        assert_eq!(lines[1], "1");
        assert_eq!(lines[2], "2");
        assert_eq!(export_sdpa(&import_sdpa(&text).unwrap()), text);
    }
}
