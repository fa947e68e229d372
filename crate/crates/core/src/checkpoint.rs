//! Plain-text sampler checkpoints.
//!
//! A checkpoint is a sequence of lines, each a keyword followed by
//! whitespace-separated values. Reals are written in Rust's shortest
//! round-trip form, so a reload reproduces the state bit for bit, random
//! stream included.
//!
//! ```text
//! edgepart-checkpoint 1
//! model truncated            | model idepm
//! iteration <completed sweeps>
//! rng <seed> <stream> <word position>
//! freeze_hypers <true|false>
//! shape <I> <J>
//! hyper <name> <value>       (one line per hyperparameter)
//!
//! truncated only:
//! variant <epm|cepm|depm>
//! truncation <T>
//! lambda <T values>
//! row <T values>             (I lines: U or phi)
//! col <T values>             (J lines: V or psi)
//! edge <i> <j> <T counts>    (one line per one-entry)
//!
//! idepm only:
//! count_step <birth-death|instantiated-ztp>
//! next_id <id>
//! lambda_rest <value>
//! atom <id> -                                    (no parameters yet)
//! atom <id> <lambda> phi <I values> psi <J values>
//! edge <i> <j> <atom id per customer>
//!
//! end
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::counts::LatentCounts;
use crate::distributions::RngHandle;
use crate::error::{Error, Result};
use crate::idepm::{AtomParams, CollapsedState, CountStep, IdepmHypers};
use crate::options::SweepOptions;
use crate::truncated::{FactorPrior, Hyperparameters, TruncatedState, TruncatedVariant};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "edgepart-checkpoint";

#[derive(Clone, Debug)]
pub enum ModelState {
    Truncated(Box<TruncatedState>),
    Collapsed(Box<CollapsedState>),
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub iteration: u64,
    pub state: ModelState,
}

fn join<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

impl Checkpoint {
    pub fn write(&self, mut sink: impl Write) -> Result<()> {
        writeln!(sink, "{MAGIC} {FORMAT_VERSION}")?;
        let (kind, rng, options) = match &self.state {
            ModelState::Truncated(s) => ("truncated", s.rng(), s.options()),
            ModelState::Collapsed(s) => ("idepm", s.rng(), s.options()),
        };
        writeln!(sink, "model {kind}")?;
        writeln!(sink, "iteration {}", self.iteration)?;
        writeln!(
            sink,
            "rng {} {} {}",
            rng.seed(),
            rng.stream(),
            rng.word_pos()
        )?;
        writeln!(sink, "freeze_hypers {}", options.freeze_hypers)?;
        match &self.state {
            ModelState::Truncated(s) => write_truncated(s, &mut sink)?,
            ModelState::Collapsed(s) => write_collapsed(s, &mut sink)?,
        }
        writeln!(sink, "end")?;
        Ok(())
    }

    pub fn read(source: impl BufRead) -> Result<Self> {
        let mut lines = Lines::new(source)?;
        let header = lines.expect(MAGIC)?;
        let version: u32 = parse(header.first(), "format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let kind = lines.expect("model")?;
        let iteration = parse(lines.expect("iteration")?.first(), "iteration")?;
        let r = lines.expect("rng")?;
        if r.len() != 3 {
            return Err(Error::Checkpoint(
                "rng needs seed, stream and position".into(),
            ));
        }
        let rng = RngHandle::from_position(
            parse(Some(&r[0]), "rng seed")?,
            parse(Some(&r[1]), "rng stream")?,
            parse(Some(&r[2]), "rng position")?,
        );
        let options = SweepOptions {
            freeze_hypers: parse(lines.expect("freeze_hypers")?.first(), "freeze_hypers")?,
            fault: None,
        };
        let state = match kind.first().map(String::as_str) {
            Some("truncated") => ModelState::Truncated(Box::new(
                read_truncated(&mut lines, rng)?.with_options(options),
            )),
            Some("idepm") => ModelState::Collapsed(Box::new(
                read_collapsed(&mut lines, rng)?.with_options(options),
            )),
            other => {
                return Err(Error::Checkpoint(format!("unknown model kind {other:?}")));
            }
        };
        lines.expect("end")?;
        Ok(Checkpoint { iteration, state })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut sink = BufWriter::new(File::create(path)?);
        self.write(&mut sink)?;
        sink.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

fn write_truncated(s: &TruncatedState, sink: &mut impl Write) -> Result<()> {
    let t = s.truncation();
    writeln!(sink, "shape {} {}", s.n_rows(), s.n_cols())?;
    for (name, value) in s.hypers().named_values() {
        writeln!(sink, "hyper {name} {value}")?;
    }
    writeln!(sink, "variant {}", s.variant().name())?;
    writeln!(sink, "truncation {t}")?;
    writeln!(sink, "lambda {}", join(s.lambda()))?;
    for row in s.row_factors.chunks_exact(t) {
        writeln!(sink, "row {}", join(row))?;
    }
    for col in s.col_factors.chunks_exact(t) {
        writeln!(sink, "col {}", join(col))?;
    }
    let counts = s.counts();
    for (e, &(i, j)) in counts.edges().iter().enumerate() {
        writeln!(sink, "edge {i} {j} {}", join(counts.edge_counts(e)))?;
    }
    Ok(())
}

fn write_collapsed(s: &CollapsedState, sink: &mut impl Write) -> Result<()> {
    writeln!(sink, "shape {} {}", s.n_rows(), s.n_cols())?;
    for (name, value) in s.hypers().named_values() {
        writeln!(sink, "hyper {name} {value}")?;
    }
    writeln!(sink, "count_step {}", s.count_step().name())?;
    writeln!(sink, "next_id {}", s.next_id)?;
    writeln!(sink, "lambda_rest {}", s.lambda_rest())?;
    for atom in s.atoms() {
        match atom.params() {
            Some(p) => writeln!(
                sink,
                "atom {} {} phi {} psi {}",
                atom.id(),
                p.lambda,
                join(&p.phi),
                join(&p.psi)
            )?,
            None => writeln!(sink, "atom {} -", atom.id())?,
        }
    }
    for (e, &(i, j)) in s.edges().iter().enumerate() {
        writeln!(sink, "edge {i} {j} {}", join(s.labels(e)))?;
    }
    Ok(())
}

fn read_hypers(lines: &mut Lines<impl BufRead>) -> Result<Vec<(String, f64)>> {
    let mut values = Vec::new();
    while lines.peek_keyword() == Some("hyper") {
        let v = lines.expect("hyper")?;
        if v.len() != 2 {
            return Err(Error::Checkpoint(format!(
                "line {}: hyper needs a name and a value",
                lines.line_no
            )));
        }
        values.push((v[0].clone(), parse(Some(&v[1]), "hyperparameter")?));
    }
    Ok(values)
}

fn lookup(values: &[(String, f64)], name: &str) -> Result<f64> {
    values
        .iter()
        .find(|(n, _)| n == name)
        .map(|&(_, v)| v)
        .ok_or_else(|| Error::Checkpoint(format!("missing hyperparameter {name}")))
}

fn read_shape(lines: &mut Lines<impl BufRead>) -> Result<(usize, usize)> {
    let v = lines.expect("shape")?;
    if v.len() != 2 {
        return Err(Error::Checkpoint("shape needs two sizes".into()));
    }
    Ok((parse(Some(&v[0]), "rows")?, parse(Some(&v[1]), "columns")?))
}

fn read_truncated(lines: &mut Lines<impl BufRead>, rng: RngHandle) -> Result<TruncatedState> {
    let (n_rows, n_cols) = read_shape(lines)?;
    let h = read_hypers(lines)?;
    let variant: TruncatedVariant = parse(lines.expect("variant")?.first(), "variant")?;
    let factors = match variant {
        TruncatedVariant::Epm => FactorPrior::Gamma {
            a1: lookup(&h, "a1")?,
            b1: lookup(&h, "b1")?,
            a2: lookup(&h, "a2")?,
            b2: lookup(&h, "b2")?,
        },
        TruncatedVariant::Cepm => FactorPrior::Constrained {
            a1: lookup(&h, "a1")?,
            a2: lookup(&h, "a2")?,
            c1: lookup(&h, "c1")?,
            c2: lookup(&h, "c2")?,
        },
        TruncatedVariant::Depm => FactorPrior::Dirichlet {
            alpha1: lookup(&h, "alpha1")?,
            alpha2: lookup(&h, "alpha2")?,
        },
    };
    let hypers = Hyperparameters {
        factors,
        gamma0: lookup(&h, "gamma0")?,
        c0: lookup(&h, "c0")?,
        e0: lookup(&h, "e0")?,
        f0: lookup(&h, "f0")?,
    };
    let t: usize = parse(lines.expect("truncation")?.first(), "truncation")?;
    let lambda = parse_reals(&lines.expect("lambda")?, t, "lambda")?;
    let mut row_factors = Vec::with_capacity(n_rows * t);
    for _ in 0..n_rows {
        row_factors.extend(parse_reals(&lines.expect("row")?, t, "row factors")?);
    }
    let mut col_factors = Vec::with_capacity(n_cols * t);
    for _ in 0..n_cols {
        col_factors.extend(parse_reals(&lines.expect("col")?, t, "column factors")?);
    }
    let mut entries = Vec::new();
    while lines.peek_keyword() == Some("edge") {
        let v = lines.expect("edge")?;
        if v.len() != t + 2 {
            return Err(Error::Checkpoint(format!(
                "line {}: edge needs i, j and {t} counts",
                lines.line_no
            )));
        }
        let i = parse(Some(&v[0]), "row index")?;
        let j = parse(Some(&v[1]), "column index")?;
        let per_atom = v[2..]
            .iter()
            .map(|c| parse(Some(c), "count"))
            .collect::<Result<Vec<u64>>>()?;
        entries.push(((i, j), per_atom));
    }
    let counts = LatentCounts::from_edges(n_rows, n_cols, t, entries)?;
    TruncatedState::from_parts(
        n_rows,
        n_cols,
        t,
        row_factors,
        col_factors,
        lambda,
        counts,
        hypers,
        rng,
    )
}

fn read_collapsed(lines: &mut Lines<impl BufRead>, rng: RngHandle) -> Result<CollapsedState> {
    let (n_rows, n_cols) = read_shape(lines)?;
    let h = read_hypers(lines)?;
    let hypers = IdepmHypers {
        alpha1: lookup(&h, "alpha1")?,
        alpha2: lookup(&h, "alpha2")?,
        gamma0: lookup(&h, "gamma0")?,
        c0: lookup(&h, "c0")?,
        e0: lookup(&h, "e0")?,
        f0: lookup(&h, "f0")?,
    };
    let count_step: CountStep = parse(lines.expect("count_step")?.first(), "count step")?;
    let next_id = parse(lines.expect("next_id")?.first(), "next id")?;
    let lambda_rest = parse(lines.expect("lambda_rest")?.first(), "lambda_rest")?;
    let mut atoms = Vec::new();
    while lines.peek_keyword() == Some("atom") {
        let v = lines.expect("atom")?;
        let id: u64 = parse(v.first(), "atom id")?;
        let params = if v.get(1).map(String::as_str) == Some("-") && v.len() == 2 {
            None
        } else {
            if v.len() != 4 + n_rows + n_cols || v[2] != "phi" || v[3 + n_rows] != "psi" {
                return Err(Error::Checkpoint(format!(
                    "line {}: atom needs id, lambda, phi with {n_rows} values and psi with {n_cols}",
                    lines.line_no
                )));
            }
            Some(AtomParams {
                lambda: parse(Some(&v[1]), "atom weight")?,
                phi: parse_reals(&v[3..3 + n_rows], n_rows, "phi")?,
                psi: parse_reals(&v[4 + n_rows..], n_cols, "psi")?,
            })
        };
        atoms.push((id, params));
    }
    let (mut edges, mut labels) = (Vec::new(), Vec::new());
    while lines.peek_keyword() == Some("edge") {
        let v = lines.expect("edge")?;
        if v.len() < 3 {
            return Err(Error::Checkpoint(format!(
                "line {}: edge needs i, j and labels",
                lines.line_no
            )));
        }
        edges.push((
            parse(Some(&v[0]), "row index")?,
            parse(Some(&v[1]), "column index")?,
        ));
        labels.push(
            v[2..]
                .iter()
                .map(|c| parse(Some(c), "atom id"))
                .collect::<Result<Vec<u64>>>()?,
        );
    }
    let state = CollapsedState::from_parts(
        n_rows,
        n_cols,
        edges,
        labels,
        atoms,
        next_id,
        lambda_rest,
        hypers,
        rng,
    )?;
    Ok(state.with_count_step(count_step))
}

fn parse<T: FromStr>(token: Option<&String>, what: &str) -> Result<T> {
    let token = token.ok_or_else(|| Error::Checkpoint(format!("missing {what}")))?;
    token
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad {what} '{token}'")))
}

fn parse_reals(tokens: &[String], expected: usize, what: &str) -> Result<Vec<f64>> {
    if tokens.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{what}: expected {expected} values, found {}",
            tokens.len()
        )));
    }
    tokens.iter().map(|t| parse(Some(t), what)).collect()
}

/// Line reader with one line of lookahead. Blank lines are skipped.
struct Lines<R> {
    source: R,
    next: Option<(String, Vec<String>)>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn new(source: R) -> Result<Self> {
        let mut lines = Lines {
            source,
            next: None,
            line_no: 0,
        };
        lines.advance()?;
        Ok(lines)
    }

    fn advance(&mut self) -> Result<()> {
        let mut buf = String::new();
        self.next = None;
        loop {
            buf.clear();
            if self.source.read_line(&mut buf)? == 0 {
                return Ok(());
            }
            self.line_no += 1;
            let mut tokens = buf.split_whitespace().map(str::to_string);
            if let Some(keyword) = tokens.next() {
                self.next = Some((keyword, tokens.collect()));
                return Ok(());
            }
        }
    }

    fn peek_keyword(&self) -> Option<&str> {
        self.next.as_ref().map(|(k, _)| k.as_str())
    }

    fn expect(&mut self, keyword: &str) -> Result<Vec<String>> {
        match self.next.take() {
            Some((k, values)) if k == keyword => {
                self.advance()?;
                Ok(values)
            }
            Some((k, _)) => Err(Error::Checkpoint(format!(
                "line {}: expected '{keyword}', found '{k}'",
                self.line_no
            ))),
            None => Err(Error::Checkpoint(format!(
                "unexpected end of file, expected '{keyword}'"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SparseBinaryMatrix;

    fn round_trip(c: &Checkpoint) -> Checkpoint {
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        Checkpoint::read(buf.as_slice()).unwrap()
    }

    fn matrix() -> SparseBinaryMatrix {
        SparseBinaryMatrix::new(4, 5, [(0, 0), (0, 1), (1, 1), (2, 3), (3, 4), (3, 0)]).unwrap()
    }

    #[test]
    fn truncated_resume_is_bit_exact() {
        let x = matrix();
        for variant in [
            TruncatedVariant::Epm,
            TruncatedVariant::Cepm,
            TruncatedVariant::Depm,
        ] {
            let hypers = Hyperparameters::for_variant(variant, 4, 5);
            let mut a = TruncatedState::init(&x, 6, hypers, RngHandle::new(11)).unwrap();
            for _ in 0..5 {
                a.gibbs_sweep(&x).unwrap();
            }
            let c = Checkpoint {
                iteration: 5,
                state: ModelState::Truncated(Box::new(a.clone())),
            };
            let back = round_trip(&c);
            assert_eq!(back.iteration, 5);
            let ModelState::Truncated(mut b) = back.state else {
                panic!("wrong kind")
            };
            for _ in 0..5 {
                a.gibbs_sweep(&x).unwrap();
                b.gibbs_sweep(&x).unwrap();
            }
            assert_eq!(a.lambda(), b.lambda());
            assert_eq!(a.hypers(), b.hypers());
            assert_eq!(a.counts(), b.counts());
            assert_eq!(a.rng().word_pos(), b.rng().word_pos());
        }
    }

    #[test]
    fn idepm_resume_is_bit_exact() {
        let x = matrix();
        for step in [CountStep::BirthDeath, CountStep::InstantiatedZtp] {
            let mut a = CollapsedState::init(&x, IdepmHypers::default(), RngHandle::new(12))
                .unwrap()
                .with_count_step(step);
            for _ in 0..7 {
                a.collapsed_sweep(&x).unwrap();
            }
            let back = round_trip(&Checkpoint {
                iteration: 7,
                state: ModelState::Collapsed(Box::new(a.clone())),
            });
            let ModelState::Collapsed(mut b) = back.state else {
                panic!("wrong kind")
            };
            assert_eq!(b.count_step(), step);
            for _ in 0..7 {
                a.collapsed_sweep(&x).unwrap();
                b.collapsed_sweep(&x).unwrap();
            }
            assert_eq!(a.atoms(), b.atoms());
            assert_eq!(a.hypers(), b.hypers());
            assert_eq!(a.lambda_rest(), b.lambda_rest());
            assert_eq!(a.log_marginal_likelihood(), b.log_marginal_likelihood());
        }
    }

    #[test]
    fn uninstantiated_atoms_survive() {
        let s = CollapsedState::from_labels(
            2,
            2,
            [((0, 0), vec![3, 3]), ((1, 1), vec![9])],
            IdepmHypers::default(),
            RngHandle::new(1),
        )
        .unwrap();
        let back = round_trip(&Checkpoint {
            iteration: 0,
            state: ModelState::Collapsed(Box::new(s.clone())),
        });
        let ModelState::Collapsed(b) = back.state else {
            panic!("wrong kind")
        };
        assert_eq!(s.atoms(), b.atoms());
        assert!(b.atoms().iter().all(|a| a.params().is_none()));
    }

    #[test]
    fn rejects_bad_input() {
        let x = matrix();
        let s = TruncatedState::init(&x, 3, Hyperparameters::epm(), RngHandle::new(2)).unwrap();
        let mut buf = Vec::new();
        Checkpoint {
            iteration: 1,
            state: ModelState::Truncated(Box::new(s)),
        }
        .write(&mut buf)
        .unwrap();
        let text = String::from_utf8(buf).unwrap();

        let wrong_version = text.replacen("edgepart-checkpoint 1", "edgepart-checkpoint 2", 1);
        assert!(matches!(
            Checkpoint::read(wrong_version.as_bytes()),
            Err(Error::Checkpoint(_))
        ));
        let truncated_file = &text[..text.len() / 2];
        assert!(Checkpoint::read(truncated_file.as_bytes()).is_err());
        let bad_number = text.replacen("truncation 3", "truncation three", 1);
        assert!(Checkpoint::read(bad_number.as_bytes()).is_err());
        let short_lambda = text.replacen("truncation 3", "truncation 4", 1);
        assert!(Checkpoint::read(short_lambda.as_bytes()).is_err());
    }

    #[test]
    fn idepm_rejects_unknown_labels() {
        let text =
            "edgepart-checkpoint 1\nmodel idepm\niteration 0\nrng 1 0 0\nfreeze_hypers false\n\
                    shape 1 1\nhyper alpha1 1\nhyper alpha2 1\nhyper gamma0 1\nhyper c0 1\n\
                    hyper e0 0.01\nhyper f0 0.01\ncount_step birth-death\nnext_id 2\n\
                    lambda_rest 0.5\natom 0 -\nedge 0 0 1\nend\n";
        assert!(Checkpoint::read(text.as_bytes()).is_err());
        let fixed = text.replace("edge 0 0 1", "edge 0 0 0");
        assert!(Checkpoint::read(fixed.as_bytes()).is_ok());
    }
}
