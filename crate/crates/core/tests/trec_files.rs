mod common;

use listrank::io_trec::{load_corpus, parse_qrels, parse_run, run_to_string, write_run};
use listrank::metrics::evaluate_run;
use listrank::model::{PassageId, QueryId};
use listrank::Error;

#[test]
fn fixtures_load() {
    let tiny = common::load_bench("tiny");
    assert_eq!(tiny.corpus.len(), 26);
    assert_eq!(tiny.queries.len(), 5);
    assert_eq!(tiny.qrels.len(), 24);
    // newlines and tabs inside JSON strings survive loading
    assert!(tiny.corpus[&PassageId::new("t26").unwrap()].text.contains('\n'));

    let synth = common::load_bench("synth50");
    assert_eq!((synth.queries.len(), synth.corpus.len()), (50, 1500));
}

#[test]
fn rescaling_scores_leaves_metrics_unchanged() {
    let text = common::read("metrics5/run.txt");
    let qrels = parse_qrels(common::open("metrics5/qrels.txt")).unwrap().value;
    let rescaled: String = text
        .lines()
        .map(|l| {
            let mut f: Vec<String> = l.split_whitespace().map(String::from).collect();
            let s: f64 = f[4].parse().unwrap();
            f[4] = format!("{}", (s * 3.0 + 1.0).exp().ln() * 1000.0 - 7.0);
            f[3] = "0".into();
            f.join("\t") + "\n"
        })
        .collect();
    let a = evaluate_run(&parse_run(text.as_bytes()).unwrap(), &qrels, 2);
    let b = evaluate_run(&parse_run(rescaled.as_bytes()).unwrap(), &qrels, 2);
    assert_eq!(a.per_query, b.per_query);
}

#[test]
fn written_runs_parse_back() {
    let run = parse_run(common::open("metrics5/run.txt")).unwrap();
    let text = run_to_string(&run, 6);
    assert_eq!(parse_run(text.as_bytes()).unwrap(), run);
    let mut buf = Vec::new();
    write_run(&run, 2, &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().starts_with("m1 Q0 d02 1 20.00 fx\n"));
}

#[test]
fn queries_outside_the_qrels_are_skipped() {
    let qrels = parse_qrels(common::open("metrics5/qrels.txt")).unwrap().value;
    let run = parse_run("m4 Q0 g01 1 1 r\nzz Q0 g01 1 1 r\n".as_bytes()).unwrap();
    let report = evaluate_run(&run, &qrels, 2);
    assert_eq!(report.skipped, vec![QueryId::new("zz").unwrap()]);
    assert_eq!(report.evaluated(), 5);
    // judged queries missing from the run count as zero
    assert_eq!(report.per_query[&QueryId::new("m1").unwrap()].ndcg_at_10, 0.0);
    assert!(report.mean_ndcg_at_10 > 0.0 && report.mean_ndcg_at_10 < 1.0);
}

#[test]
fn malformed_inputs_name_the_line() {
    match parse_run("q1 Q0 d1 1 1.0 t\nq1 Q0 d2 x 1.0 t\n".as_bytes()) {
        Err(Error::Parse { line: 2, .. }) => {}
        other => panic!("{other:?}"),
    }
    match parse_qrels("q 0 d 1\nq 0 d 2\n".as_bytes()) {
        Err(Error::Data { line: 2, .. }) => {}
        other => panic!("{other:?}"),
    }
    match load_corpus("{\"id\":\"a\",\"contents\":\"x\"}\n{\"id\":\"a\",\"contents\":\"y\"}\n".as_bytes()) {
        Err(Error::Data { line: 2, .. }) => {}
        other => panic!("{other:?}"),
    }
    match parse_run(&b"q1 Q0 d1 1 1.0 t\nq1 Q0 \xff 2 1.0 t\n"[..]) {
        Err(Error::Parse { line: 2, .. }) => {}
        other => panic!("{other:?}"),
    }
}
