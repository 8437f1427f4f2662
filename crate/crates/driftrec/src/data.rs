//! Interaction corpora: vocabulary handling, file I/O, synthetic data with
//! known change points, and holdout splitting.
//!
//! The on-disk format is a comma-separated file with a fixed header. Plain
//! interaction logs carry `user_id,item_id,position`; labeled synthetic logs
//! append `change_point,src1,src2` (repeated on every row of a sequence).
//! Lines starting with `#` are comments and are skipped by every loader.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub(crate) const PLAIN_HEADER: &str = "user_id,item_id,position";
pub(crate) const LABELED_HEADER: &str = "user_id,item_id,position,change_point,src1,src2";

// ----------------------------------------------------------------------
// Core types
// ----------------------------------------------------------------------

/// Maps external item ids to dense indices in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Identity vocabulary `item-0 .. item-{count-1}` for generated corpora.
    pub fn synthetic(count: usize) -> Self {
        let mut vocab = Self::new();
        for i in 0..count {
            vocab.intern(&format!("item-{i}"));
        }
        vocab
    }

    /// Returns the index for `id`, interning it if unseen.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.index.get(id) {
            return idx;
        }
        let idx = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), idx);
        idx
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// External id for a dense index. Panics if out of range.
    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// One user's time-ordered item indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSequence {
    pub user_id: String,
    pub items: Vec<usize>,
}

impl InteractionSequence {
    pub fn new(user_id: impl Into<String>, items: Vec<usize>) -> Self {
        Self {
            user_id: user_id.into(),
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// A synthetic sequence with its ground-truth change point and the two
/// source sequences it was concatenated from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSequence {
    pub seq: InteractionSequence,
    /// Index of the first item drawn from the second source; in `[1, T-1]`.
    pub change_point: usize,
    /// User ids of the two pool sequences the windows were cut from.
    pub sources: (String, String),
}

/// Per-user train/test partition produced by [`holdout_split`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoldoutUser {
    pub prefix: InteractionSequence,
    /// The held-out suffix, in temporal order.
    pub heldout: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoldoutSplit {
    pub users: Vec<HoldoutUser>,
    /// Sequences too short to split (length <= n).
    pub skipped: usize,
}

// ----------------------------------------------------------------------
// Loading
// ----------------------------------------------------------------------

/// Loads a plain interaction file. The vocabulary is built in first-appearance
/// order; each user's rows are ordered by their `position` column.
pub fn load_interactions(path: impl AsRef<Path>) -> Result<(Vocabulary, Vec<InteractionSequence>)> {
    let file = File::open(path)?;
    read_interactions(BufReader::new(file))
}

/// Loads a labeled synthetic interaction file (six columns).
pub fn load_labeled(path: impl AsRef<Path>) -> Result<(Vocabulary, Vec<LabeledSequence>)> {
    let file = File::open(path)?;
    read_labeled(BufReader::new(file))
}

/// Loads either file flavor, sniffing the header line. Labeled files also
/// return their ground-truth change points, in sequence order.
pub fn load_any(
    path: impl AsRef<Path>,
) -> Result<(Vocabulary, Vec<InteractionSequence>, Option<Vec<usize>>)> {
    let text = std::fs::read_to_string(path)?;
    let header = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'));
    if header == Some(LABELED_HEADER) {
        let (vocab, labeled) = read_labeled(text.as_bytes())?;
        let seqs = labeled.iter().map(|l| l.seq.clone()).collect();
        let truths = labeled.iter().map(|l| l.change_point).collect();
        Ok((vocab, seqs, Some(truths)))
    } else {
        let (vocab, seqs) = read_interactions(text.as_bytes())?;
        Ok((vocab, seqs, None))
    }
}

/// [`load_interactions`] over any reader; used directly in tests.
pub fn read_interactions<R: BufRead>(reader: R) -> Result<(Vocabulary, Vec<InteractionSequence>)> {
    let rows = read_rows(reader, PLAIN_HEADER, 3)?;
    let mut vocab = Vocabulary::new();
    let mut order: Vec<String> = Vec::new();
    let mut per_user: HashMap<String, Vec<(usize, usize)>> = HashMap::new();

    for row in rows {
        let item = vocab.intern(&row.fields[1]);
        let position = parse_position(&row.fields[2], row.line)?;
        let user = row.fields.into_iter().next().expect("three fields");
        let entries = per_user.entry(user.clone()).or_insert_with(|| {
            order.push(user.clone());
            Vec::new()
        });
        if entries.iter().any(|&(p, _)| p == position) {
            return Err(Error::parse(
                row.line,
                format!("duplicate position {position} for user {user}"),
            ));
        }
        entries.push((position, item));
    }

    let seqs = order
        .into_iter()
        .map(|user| {
            let mut entries = per_user.remove(&user).expect("grouped");
            entries.sort_unstable();
            let items = entries.into_iter().map(|(_, item)| item).collect();
            InteractionSequence::new(user, items)
        })
        .collect();
    Ok((vocab, seqs))
}

/// [`load_labeled`] over any reader; used directly in tests.
pub fn read_labeled<R: BufRead>(reader: R) -> Result<(Vocabulary, Vec<LabeledSequence>)> {
    let rows = read_rows(reader, LABELED_HEADER, 6)?;
    let mut vocab = Vocabulary::new();
    let mut order: Vec<String> = Vec::new();
    struct Partial {
        entries: Vec<(usize, usize)>,
        change_point: usize,
        sources: (String, String),
    }
    let mut per_user: HashMap<String, Partial> = HashMap::new();

    for row in rows {
        let line = row.line;
        let [user, item_id, position, change_point, src1, src2]: [String; 6] = row
            .fields
            .try_into()
            .expect("six fields");
        let item = vocab.intern(&item_id);
        let position = parse_position(&position, line)?;
        let change_point: usize = change_point.parse().map_err(|_| {
            Error::parse(line, format!("change_point is not an integer: {change_point}"))
        })?;

        match per_user.get_mut(&user) {
            Some(partial) => {
                if partial.change_point != change_point
                    || partial.sources.0 != src1
                    || partial.sources.1 != src2
                {
                    return Err(Error::parse(
                        line,
                        format!("inconsistent labels for user {user}"),
                    ));
                }
                if partial.entries.iter().any(|&(p, _)| p == position) {
                    return Err(Error::parse(
                        line,
                        format!("duplicate position {position} for user {user}"),
                    ));
                }
                partial.entries.push((position, item));
            }
            None => {
                order.push(user.clone());
                per_user.insert(
                    user,
                    Partial {
                        entries: vec![(position, item)],
                        change_point,
                        sources: (src1, src2),
                    },
                );
            }
        }
    }

    let mut seqs = Vec::with_capacity(order.len());
    for user in order {
        let mut partial = per_user.remove(&user).expect("grouped");
        partial.entries.sort_unstable();
        let items: Vec<usize> = partial.entries.into_iter().map(|(_, item)| item).collect();
        if partial.change_point == 0 || partial.change_point >= items.len() {
            return Err(Error::InvalidChangePoint(format!(
                "user {user}: change point {} outside [1, {})",
                partial.change_point,
                items.len()
            )));
        }
        seqs.push(LabeledSequence {
            seq: InteractionSequence::new(user, items),
            change_point: partial.change_point,
            sources: partial.sources,
        });
    }
    Ok((vocab, seqs))
}

struct Row {
    line: usize,
    fields: Vec<String>,
}

fn read_rows<R: BufRead>(reader: R, header: &str, columns: usize) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !saw_header {
            if line != header {
                return Err(Error::parse(
                    line_no,
                    format!("expected header `{header}`, found `{line}`"),
                ));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != columns {
            return Err(Error::parse(
                line_no,
                format!("expected {columns} fields, found {}", fields.len()),
            ));
        }
        rows.push(Row {
            line: line_no,
            fields,
        });
    }
    if !saw_header {
        return Err(Error::parse(1, format!("missing header `{header}`")));
    }
    Ok(rows)
}

fn parse_position(field: &str, line: usize) -> Result<usize> {
    field
        .parse()
        .map_err(|_| Error::parse(line, format!("position is not an integer: {field}")))
}

// ----------------------------------------------------------------------
// Saving
// ----------------------------------------------------------------------

/// Writes a plain interaction file; positions are renumbered `0..T`.
pub fn save_interactions(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    seqs: &[InteractionSequence],
) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_interactions(&mut writer, vocab, seqs)
}

/// Writes a labeled synthetic interaction file.
pub fn save_labeled(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    seqs: &[LabeledSequence],
) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_labeled(&mut writer, vocab, seqs)
}

/// [`save_interactions`] onto any writer, so callers can prepend `#` comments.
pub fn write_interactions<W: Write>(
    writer: &mut W,
    vocab: &Vocabulary,
    seqs: &[InteractionSequence],
) -> Result<()> {
    writeln!(writer, "{PLAIN_HEADER}")?;
    for seq in seqs {
        check_field(&seq.user_id)?;
        for (pos, &item) in seq.items.iter().enumerate() {
            let id = item_id(vocab, item)?;
            check_field(id)?;
            writeln!(writer, "{},{},{}", seq.user_id, id, pos)?;
        }
    }
    Ok(())
}

/// [`save_labeled`] onto any writer.
pub fn write_labeled<W: Write>(
    writer: &mut W,
    vocab: &Vocabulary,
    seqs: &[LabeledSequence],
) -> Result<()> {
    writeln!(writer, "{LABELED_HEADER}")?;
    for labeled in seqs {
        let seq = &labeled.seq;
        check_field(&seq.user_id)?;
        check_field(&labeled.sources.0)?;
        check_field(&labeled.sources.1)?;
        if labeled.change_point == 0 || labeled.change_point >= seq.len() {
            return Err(Error::InvalidChangePoint(format!(
                "user {}: change point {} outside [1, {})",
                seq.user_id,
                labeled.change_point,
                seq.len()
            )));
        }
        for (pos, &item) in seq.items.iter().enumerate() {
            let id = item_id(vocab, item)?;
            check_field(id)?;
            writeln!(
                writer,
                "{},{},{},{},{},{}",
                seq.user_id, id, pos, labeled.change_point, labeled.sources.0, labeled.sources.1
            )?;
        }
    }
    Ok(())
}

fn item_id(vocab: &Vocabulary, item: usize) -> Result<&str> {
    if item >= vocab.len() {
        return Err(Error::Vocabulary(format!(
            "item index {item} outside vocabulary of size {}",
            vocab.len()
        )));
    }
    Ok(vocab.id(item))
}

fn check_field(field: &str) -> Result<()> {
    if field.is_empty() || field.starts_with('#') || field.contains(',') || field.contains('\n') {
        return Err(Error::InvalidParameter(format!(
            "id not representable in the interaction format: {field:?}"
        )));
    }
    Ok(())
}

// ----------------------------------------------------------------------
// Synthetic generation
// ----------------------------------------------------------------------

/// Samples a pool of single-taste sequences from a block-structured emission
/// model: state `s` of `num_states` emits uniformly over its own
/// `num_items / num_states` item block, and each sequence stays in one state.
pub fn planted_hmm_pool(
    num_states: usize,
    num_items: usize,
    lengths: &[usize],
    seed: u64,
) -> Result<Vec<InteractionSequence>> {
    if num_states < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 states, got {num_states}"
        )));
    }
    if num_items == 0 || num_items % num_states != 0 {
        return Err(Error::InvalidParameter(format!(
            "item count {num_items} is not divisible by state count {num_states}"
        )));
    }
    if lengths.iter().any(|&len| len == 0) {
        return Err(Error::InvalidParameter("zero-length pool sequence".into()));
    }
    let block = num_items / num_states;
    let pool = lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| {
            let mut rng = rng::seeded(seed, i as u64);
            let state = rng.gen_range(0..num_states);
            let items = (0..len)
                .map(|_| state * block + rng.gen_range(0..block))
                .collect();
            InteractionSequence::new(format!("pool-{i}"), items)
        })
        .collect();
    Ok(pool)
}

/// Concatenates random contiguous windows of two distinct pool sequences.
///
/// For each output, two sources and two window sizes `w1, w2` in
/// `[min_window, max_window]` are drawn; the result has length `w1 + w2` and
/// its ground-truth change point is `w1`.
pub fn synth_concat(
    pool: &[InteractionSequence],
    count: usize,
    seed: u64,
    min_window: usize,
    max_window: usize,
) -> Result<Vec<LabeledSequence>> {
    if pool.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "pool must hold at least 2 sequences, got {}",
            pool.len()
        )));
    }
    let shortest = pool.iter().map(InteractionSequence::len).min().unwrap_or(0);
    if min_window == 0 || min_window > max_window || max_window > shortest {
        return Err(Error::InvalidParameter(format!(
            "window bounds [{min_window}, {max_window}] infeasible for shortest pool length {shortest}"
        )));
    }

    let out = (0..count)
        .map(|i| {
            let mut rng = rng::seeded(seed, i as u64);
            let first = rng.gen_range(0..pool.len());
            // Uniform over the remaining sequences without rejection.
            let mut second = rng.gen_range(0..pool.len() - 1);
            if second >= first {
                second += 1;
            }
            let w1 = rng.gen_range(min_window..=max_window);
            let w2 = rng.gen_range(min_window..=max_window);
            let s1 = rng.gen_range(0..=pool[first].len() - w1);
            let s2 = rng.gen_range(0..=pool[second].len() - w2);
            let mut items = Vec::with_capacity(w1 + w2);
            items.extend_from_slice(&pool[first].items[s1..s1 + w1]);
            items.extend_from_slice(&pool[second].items[s2..s2 + w2]);
            LabeledSequence {
                seq: InteractionSequence::new(format!("synth-{i}"), items),
                change_point: w1,
                sources: (pool[first].user_id.clone(), pool[second].user_id.clone()),
            }
        })
        .collect();
    Ok(out)
}

// ----------------------------------------------------------------------
// Holdout
// ----------------------------------------------------------------------

/// Splits each sequence into a training prefix and a held-out suffix of the
/// last `n` items. Sequences with `length <= n` are skipped (counted, logged).
pub fn holdout_split(seqs: &[InteractionSequence], n: usize) -> Result<HoldoutSplit> {
    if n == 0 {
        return Err(Error::InvalidParameter("holdout size must be >= 1".into()));
    }
    let mut users = Vec::new();
    let mut skipped = 0usize;
    for seq in seqs {
        if seq.len() <= n {
            skipped += 1;
            continue;
        }
        let cut = seq.len() - n;
        users.push(HoldoutUser {
            prefix: InteractionSequence::new(seq.user_id.clone(), seq.items[..cut].to_vec()),
            heldout: seq.items[cut..].to_vec(),
        });
    }
    if skipped > 0 {
        log::info!("holdout: skipped {skipped} sequences with length <= {n}");
    }
    Ok(HoldoutSplit { users, skipped })
}

// ----------------------------------------------------------------------
// Tests
// ----------------------------------------------------------------------
