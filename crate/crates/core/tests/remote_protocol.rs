use std::sync::Arc;
use std::time::Duration;

use coboost::backend::{RemoteModel, RetryPolicy};
use coboost::backend::{serve, ServerHandle, ServerOptions};
use coboost::{boosted_next_dist, BoostSpec, Error, LanguageModel, ToyLm};

fn fast_retry(retries: u32) -> RetryPolicy {
    RetryPolicy { retries, base_delay: Duration::from_millis(5) }
}

fn served(opts: ServerOptions) -> (Arc<ToyLm>, ServerHandle) {
    let model = Arc::new(ToyLm::random(7, 5, 1.5, 11));
    let handle = serve(model.clone(), "127.0.0.1:0", opts).unwrap();
    (model, handle)
}

#[test]
fn remote_matches_local() {
    let (local, h) = served(ServerOptions::default());
    let remote = RemoteModel::connect(&h.url(), None, None).unwrap();
    assert_eq!(remote.info().vocab_size, 7);
    assert_eq!(remote.info().max_context, 5);
    for ctx in [vec![1u32], vec![2, 3, 4], vec![0, 6, 6, 1, 2]] {
        let a = local.next_logprobs(&ctx).unwrap();
        let b = remote.next_logprobs(&ctx).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    let s_local = local.score_tokens(&[1, 2], &[3, 4, 5]).unwrap();
    let s_remote = remote.score_tokens(&[1, 2], &[3, 4, 5]).unwrap();
    assert_eq!(s_local, s_remote);
    let spec = BoostSpec::contrast_k(1, -0.5).unwrap();
    let a = boosted_next_dist(local.as_ref(), &[1, 2, 3], &spec).unwrap();
    let b = boosted_next_dist(&remote, &[1, 2, 3], &spec).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn transient_failures_are_retried() {
    let (_local, h) = served(ServerOptions { fail_first: 2 });
    let remote = RemoteModel::connect_with(&h.url(), None, None, fast_retry(3)).unwrap();
    assert!(remote.next_logprobs(&[1]).is_ok());
}

#[test]
fn persistent_failure_is_a_backend_error() {
    let (_local, h) = served(ServerOptions { fail_first: 100 });
    match RemoteModel::connect_with(&h.url(), None, None, fast_retry(2)) {
        Err(e @ Error::Backend(_)) => assert_eq!(e.exit_code(), 3),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("expected failure"),
    }
}

#[test]
fn contract_violations_are_input_errors() {
    let (_local, h) = served(ServerOptions::default());
    let remote = RemoteModel::connect(&h.url(), None, None).unwrap();
    let e = remote.next_logprobs(&[0; 6]).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let e = remote.next_logprobs(&[9]).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn unreachable_server_is_a_backend_error() {
    let url = {
        let (_m, h) = served(ServerOptions::default());
        h.url()
    };
    let e = RemoteModel::connect_with(&url, None, None, fast_retry(0)).err().unwrap();
    assert_eq!(e.exit_code(), 3);
}
