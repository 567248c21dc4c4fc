use crystalline_harness::lincheck::{
    check, check_map, overlap, record_map, record_stack, MapRet, RecordSpec, StackModel,
};

#[test]
fn stack_histories_are_linearizable() {
    let mut overlapping = 0.0;
    for seed in 0..10 {
        let h = record_stack(&RecordSpec::new(seed)).unwrap();
        assert_eq!(h.len(), 1000);
        overlapping += overlap(&h);
        assert!(check(StackModel::default(), &h), "seed {seed}");
    }
    assert!(overlapping > 0.0, "no concurrent calls were recorded");
}

#[test]
fn map_histories_are_linearizable() {
    let mut overlapping = 0.0;
    for seed in 0..10 {
        let h = record_map(&RecordSpec::new(seed)).unwrap();
        assert_eq!(h.len(), 1000);
        overlapping += overlap(&h);
        assert_eq!(check_map(&h), Ok(()), "seed {seed}");
    }
    assert!(overlapping > 0.0, "no concurrent calls were recorded");
}

#[test]
fn forged_pop_is_caught() {
    let mut h = record_stack(&RecordSpec::new(7)).unwrap();
    let pop = h.iter().position(|c| c.ret.is_some()).expect("some pop succeeded");
    h[pop].ret = Some(u64::MAX);
    assert!(!check(StackModel::default(), &h));
}

#[test]
fn duplicated_pop_is_caught() {
    let mut h = record_stack(&RecordSpec::new(3)).unwrap();
    let pops: Vec<usize> = (0..h.len()).filter(|&i| h[i].ret.is_some()).collect();
    let (a, b) = (pops[0], pops[pops.len() - 1]);
    h[b].ret = h[a].ret;
    assert!(!check(StackModel::default(), &h));
}

#[test]
fn forged_first_call_on_a_key_is_caught() {
    let mut h = record_map(&RecordSpec::new(5)).unwrap();
    h.sort_by_key(|c| c.invoke);
    // The first call on a key, if nothing else on that key overlaps it,
    // must see the key absent.
    let i = (0..h.len())
        .find(|&i| {
            let k = h[i].op.key();
            h[..i].iter().all(|c| c.op.key() != k)
                && h[i + 1..].iter().filter(|c| c.op.key() == k).all(|c| c.invoke > h[i].respond)
        })
        .expect("an isolated first call");
    h[i].ret = match h[i].ret {
        MapRet::Inserted(_) => MapRet::Inserted(false),
        MapRet::Value(_) => MapRet::Value(Some(u64::MAX)),
    };
    assert_eq!(check_map(&h), Err(h[i].op.key()));
}
