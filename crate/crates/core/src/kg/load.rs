use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{
    EntityId, KgError, LdpId, RelationKind, RelationTable, TextualCorpus, TextualTriple, Triple,
    Vocab,
};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadedTriples {
    pub triples: Vec<Triple>,
    pub duplicates: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TextualLoadReport {
    pub lines: usize,
    /// Triples dropped because an endpoint is not a KG entity.
    pub unknown_endpoint: usize,
    /// Distinct LDPs below the distinct-pair threshold.
    pub ldps_below_threshold: usize,
    pub ldps_kept: usize,
    pub triples_kept: usize,
}

fn split_fields<'a>(path: &Path, line_no: usize, line: &'a str) -> Result<[&'a str; 3], KgError> {
    let mut fields = line.split('\t');
    let parse_err = |reason: String| KgError::Parse {
        path: path.to_path_buf(),
        line: line_no,
        reason,
    };
    let (Some(h), Some(r), Some(t), None) = (fields.next(), fields.next(), fields.next(), fields.next())
    else {
        let n = line.split('\t').count();
        return Err(parse_err(format!("expected 3 tab-separated fields, found {n}")));
    };
    if h.is_empty() || t.is_empty() {
        return Err(parse_err("empty entity field".into()));
    }
    if r.is_empty() {
        return Err(parse_err("empty relation field".into()));
    }
    Ok([h, r, t])
}

fn for_each_line(
    path: &Path,
    mut f: impl FnMut(usize, &str) -> Result<(), KgError>,
) -> Result<(), KgError> {
    let reader = BufReader::new(File::open(path).map_err(|e| KgError::io(path, e))?);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| KgError::io(path, e))?;
        f(i + 1, &line)?;
    }
    Ok(())
}

/// Reads `head<TAB>relation<TAB>tail` lines. Vocabularies grow monotonically
/// and every relation read here is registered as a KG relation. Repeated
/// lines are kept once.
pub fn load_triples(
    path: &Path,
    entities: &mut Vocab,
    relations: &mut RelationTable,
) -> Result<LoadedTriples, KgError> {
    let mut seen = HashSet::new();
    let mut out = LoadedTriples::default();
    for_each_line(path, |line_no, line| {
        let [h, r, t] = split_fields(path, line_no, line)?;
        let triple = Triple {
            head: EntityId(entities.get_or_insert(h)),
            relation: relations.get_or_insert(RelationKind::Kg, r),
            tail: EntityId(entities.get_or_insert(t)),
        };
        if seen.insert(triple) {
            out.triples.push(triple);
        } else {
            out.duplicates += 1;
        }
        Ok(())
    })?;
    if out.duplicates > 0 {
        log::warn!("{}: {} duplicate triples dropped", path.display(), out.duplicates);
    }
    Ok(out)
}

pub fn write_triples(
    path: &Path,
    triples: &[Triple],
    entities: &Vocab,
    relations: &RelationTable,
) -> Result<(), KgError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| KgError::io(path, e))?);
    for t in triples {
        let h = entities.surface(t.head.0).ok_or(KgError::UnknownEntity(t.head))?;
        let tl = entities.surface(t.tail.0).ok_or(KgError::UnknownEntity(t.tail))?;
        let r = relations
            .surface(t.relation)
            .ok_or(KgError::RelationAbsent(t.relation))?;
        writeln!(w, "{h}\t{r}\t{tl}").map_err(|e| KgError::io(path, e))?;
    }
    w.flush().map_err(|e| KgError::io(path, e))
}

/// Reads textual triples (`head<TAB>ldp<TAB>tail`) and keeps those whose LDP
/// occurs with at least `min_pairs` distinct ordered entity pairs in the
/// file and whose endpoints are both KG entities. Multiplicity is preserved.
pub fn load_textual_triples(
    path: &Path,
    min_pairs: usize,
    entities: &Vocab,
) -> Result<(TextualCorpus, TextualLoadReport), KgError> {
    if min_pairs == 0 {
        return Err(KgError::InvalidThreshold);
    }
    let mut raw_ldps = Vocab::new();
    let mut pairs_per_ldp: Vec<HashSet<u64>> = Vec::new();
    // Pairs are counted over raw surface strings so that entities outside the
    // KG still count towards an LDP's frequency.
    let mut surface_ids: HashMap<String, u64> = HashMap::new();
    let mut rows: Vec<(Option<EntityId>, u32, Option<EntityId>)> = Vec::new();
    let mut report = TextualLoadReport::default();

    for_each_line(path, |line_no, line| {
        let [h, l, t] = split_fields(path, line_no, line)?;
        report.lines += 1;
        let next = surface_ids.len() as u64;
        let hs = *surface_ids.entry(h.to_owned()).or_insert(next);
        let next = surface_ids.len() as u64;
        let ts = *surface_ids.entry(t.to_owned()).or_insert(next);
        let lid = raw_ldps.get_or_insert(l);
        if lid as usize == pairs_per_ldp.len() {
            pairs_per_ldp.push(HashSet::new());
        }
        pairs_per_ldp[lid as usize].insert((hs << 32) | ts);
        rows.push((
            entities.get(h).map(EntityId),
            lid,
            entities.get(t).map(EntityId),
        ));
        Ok(())
    })?;

    let keep: Vec<bool> = pairs_per_ldp.iter().map(|p| p.len() >= min_pairs).collect();
    report.ldps_below_threshold = keep.iter().filter(|k| !**k).count();

    let mut corpus = TextualCorpus::default();
    let mut remap: HashMap<u32, LdpId> = HashMap::new();
    for (h, lid, t) in rows {
        if !keep[lid as usize] {
            continue;
        }
        let (Some(h), Some(t)) = (h, t) else {
            report.unknown_endpoint += 1;
            continue;
        };
        let ldp = *remap.entry(lid).or_insert_with(|| {
            LdpId(corpus.ldps.get_or_insert(raw_ldps.surface(lid).unwrap_or_default()))
        });
        corpus.triples.push(TextualTriple { head: h, ldp, tail: t });
    }
    report.ldps_kept = corpus.ldps.len();
    report.triples_kept = corpus.triples.len();
    log::info!(
        "{}: kept {} LDPs / {} textual triples ({} LDPs below {min_pairs} pairs, {} triples with unknown endpoints)",
        path.display(),
        report.ldps_kept,
        report.triples_kept,
        report.ldps_below_threshold,
        report.unknown_endpoint
    );
    Ok((corpus, report))
}

pub fn write_textual_triples(
    path: &Path,
    triples: &[TextualTriple],
    entities: &Vocab,
    ldps: &Vocab,
) -> Result<(), KgError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| KgError::io(path, e))?);
    for t in triples {
        let h = entities.surface(t.head.0).ok_or(KgError::UnknownEntity(t.head))?;
        let tl = entities.surface(t.tail.0).ok_or(KgError::UnknownEntity(t.tail))?;
        let l = ldps.surface(t.ldp.0).ok_or(KgError::RelationAbsent(super::RelationId(t.ldp.0)))?;
        writeln!(w, "{h}\t{l}\t{tl}").map_err(|e| KgError::io(path, e))?;
    }
    w.flush().map_err(|e| KgError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn single_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.tsv", "e1\tr1\te2\n");
        let (mut ents, mut rels) = (Vocab::new(), RelationTable::new());
        let loaded = load_triples(&p, &mut ents, &mut rels).unwrap();
        assert_eq!(loaded.triples, vec![Triple::new(0, 0, 1)]);
        assert_eq!(ents.len(), 2);
        assert_eq!(rels.len(), 1);
    }

    #[test]
    fn duplicate_lines_are_counted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.tsv", "e1\tr1\te2\ne1\tr1\te2\n");
        let (mut ents, mut rels) = (Vocab::new(), RelationTable::new());
        let loaded = load_triples(&p, &mut ents, &mut rels).unwrap();
        assert_eq!(loaded.triples.len(), 1);
        assert_eq!(loaded.duplicates, 1);
    }

    #[test]
    fn empty_file_is_empty_set() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.tsv", "");
        let (mut ents, mut rels) = (Vocab::new(), RelationTable::new());
        assert!(load_triples(&p, &mut ents, &mut rels).unwrap().triples.is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.tsv", "a\tr\tb\na\tr\n");
        let (mut ents, mut rels) = (Vocab::new(), RelationTable::new());
        let err = load_triples(&p, &mut ents, &mut rels).unwrap_err();
        assert!(matches!(err, KgError::Parse { line: 2, .. }), "{err}");
        let p = write(&dir, "u.tsv", "a\tr\tb\tc\n");
        assert!(matches!(
            load_triples(&p, &mut ents, &mut rels),
            Err(KgError::Parse { line: 1, .. })
        ));
    }

    fn entity_vocab(names: &[&str]) -> Vocab {
        let mut v = Vocab::new();
        for n in names {
            v.get_or_insert(n);
        }
        v
    }

    #[test]
    fn ldp_below_threshold_is_excluded() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        let mut names = vec![];
        for i in 0..99 {
            body.push_str(&format!("h{i}\tL\tt{i}\n"));
            names.push(format!("h{i}"));
            names.push(format!("t{i}"));
        }
        let p = write(&dir, "x.tsv", &body);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let (c, rep) = load_textual_triples(&p, 100, &entity_vocab(&refs)).unwrap();
        assert!(c.triples.is_empty());
        assert_eq!(rep.ldps_below_threshold, 1);
        let (c, _) = load_textual_triples(&p, 99, &entity_vocab(&refs)).unwrap();
        assert_eq!(c.triples.len(), 99);
    }

    #[test]
    fn repeated_pair_counts_once_but_all_occurrences_kept() {
        // 3 occurrences over 2 distinct pairs.
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "x.tsv", "a\tL\tb\na\tL\tb\nc\tL\td\n");
        let ents = entity_vocab(&["a", "b", "c", "d"]);
        let (c, rep) = load_textual_triples(&p, 2, &ents).unwrap();
        assert_eq!(c.triples.len(), 3);
        assert_eq!(rep.ldps_kept, 1);
        let (c, _) = load_textual_triples(&p, 3, &ents).unwrap();
        assert!(c.triples.is_empty());
    }

    #[test]
    fn unknown_endpoints_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "x.tsv", "a\tL\tb\na\tL\tzzz\n");
        let (c, rep) = load_textual_triples(&p, 1, &entity_vocab(&["a", "b"])).unwrap();
        assert_eq!(c.triples, vec![TextualTriple::new(0, 0, 1)]);
        assert_eq!(rep.unknown_endpoint, 1);
    }

    #[test]
    fn empty_ldp_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "x.tsv", "a\t\tb\n");
        assert!(matches!(
            load_textual_triples(&p, 1, &entity_vocab(&["a", "b"])),
            Err(KgError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            load_textual_triples(&p, 0, &entity_vocab(&["a", "b"])),
            Err(KgError::InvalidThreshold)
        ));
    }

    proptest! {
        #[test]
        fn load_write_load_round_trips(
            raw in proptest::collection::vec((0u8..20, 0u8..5, 0u8..20), 0..60)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let body: String = raw
                .iter()
                .map(|(h, r, t)| format!("/m/e{h}\t/rel/{r}\t/m/e{t}\n"))
                .collect();
            let p = write(&dir, "a.tsv", &body);
            let (mut ents, mut rels) = (Vocab::new(), RelationTable::new());
            let first = load_triples(&p, &mut ents, &mut rels).unwrap();
            let q = dir.path().join("b.tsv");
            write_triples(&q, &first.triples, &ents, &rels).unwrap();
            let (mut ents2, mut rels2) = (Vocab::new(), RelationTable::new());
            let second = load_triples(&q, &mut ents2, &mut rels2).unwrap();
            prop_assert_eq!(second.duplicates, 0);
            prop_assert_eq!(&second.triples, &first.triples);
            prop_assert_eq!(ents2, ents);
        }
    }
}
