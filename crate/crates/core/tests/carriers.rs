use std::sync::Arc;
use std::time::Duration;

use fdml::coordinator::Coordinator;
use fdml::transport::{new_message_log, InProcessLink, Link, Message, MessageLog, TcpCoordinatorServer, TcpLink};

fn push(worker: u16, iteration: u64, pairs: &[(u64, f64)]) -> Message {
    Message::PushRequest {
        worker,
        iteration,
        pairs: pairs.to_vec(),
    }
}

fn pull(worker: u16, iteration: u64, samples: &[u64]) -> Message {
    Message::PullRequest {
        worker,
        iteration,
        samples: samples.to_vec(),
    }
}

/// A fixed interleaving of two workers, with a rejection, protocol errors and
/// a stray reply-type message along the way. Ends with both at iteration 3.
fn script() -> Vec<(usize, Message)> {
    vec![
        (0, push(0, 1, &[(0, 0.5), (1, 0.25)])),
        (0, pull(0, 1, &[0, 1])),
        (0, push(0, 2, &[(2, -1.0)])),
        (0, pull(0, 2, &[2])),
        (1, push(1, 1, &[(0, 1.5), (1, -0.25)])),
        (1, pull(1, 1, &[0, 1])),
        (0, pull(0, 2, &[2])),
        (1, pull(1, 3, &[3])),
        (1, push(7, 1, &[(0, 1.0)])),
        (1, push(1, 1, &[(9, 1.0)])),
        (1, Message::PushAck { iteration: 1 }),
        (1, push(1, 2, &[(2, 2.0)])),
        (1, pull(1, 2, &[2])),
        (0, push(0, 3, &[(3, 0.125), (4, 0.0)])),
        (0, pull(0, 3, &[3, 4, 0])),
        (1, push(1, 3, &[(3, 1.0), (4, 4.0)])),
        (1, pull(1, 3, &[3, 4])),
    ]
}

fn drive(links: &mut [Box<dyn Link>]) -> Vec<Message> {
    script()
        .into_iter()
        .map(|(who, msg)| links[who].exchange(&msg).unwrap())
        .collect()
}

#[test]
fn socket_and_in_process_carriers_give_identical_traces() {
    let local = Arc::new(Coordinator::new(5, 2, 1).unwrap());
    let local_logs: Vec<MessageLog> = (0..2).map(|_| new_message_log()).collect();
    let mut links: Vec<Box<dyn Link>> = local_logs
        .iter()
        .map(|log| Box::new(InProcessLink::new(Arc::clone(&local)).with_log(Arc::clone(log))) as Box<dyn Link>)
        .collect();
    let in_process = drive(&mut links);

    let remote = Arc::new(Coordinator::new(5, 2, 1).unwrap());
    let server = TcpCoordinatorServer::bind(Arc::clone(&remote), "127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    let serving = server.spawn(3);
    let socket_logs: Vec<MessageLog> = (0..2).map(|_| new_message_log()).collect();
    let mut links: Vec<Box<dyn Link>> = socket_logs
        .iter()
        .map(|log| {
            let link = TcpLink::connect(addr, 20, Duration::from_millis(10)).unwrap();
            Box::new(link.with_log(Arc::clone(log))) as Box<dyn Link>
        })
        .collect();
    let socket = drive(&mut links);
    drop(links);
    serving.join().unwrap().unwrap();

    assert_eq!(in_process, socket);
    for (a, b) in local_logs.iter().zip(&socket_logs) {
        assert_eq!(*a.lock(), *b.lock());
    }
    assert_eq!(local.status_report(), remote.status_report());

    let kinds: Vec<&str> = in_process
        .iter()
        .map(|m| match m {
            Message::PushAck { .. } => "ack",
            Message::PullGrant { .. } => "grant",
            Message::PullReject { .. } => "reject",
            Message::Error { .. } => "error",
            _ => "other",
        })
        .collect();
    assert_eq!(
        kinds,
        [
            "ack", "grant", "ack", "reject", "ack", "grant", "grant", "error", "error", "error", "error", "ack",
            "grant", "ack", "grant", "ack", "grant"
        ]
    );
    assert_eq!(in_process[6], Message::PullGrant { iteration: 2, sums: vec![-1.0] });
    assert_eq!(in_process[14], Message::PullGrant { iteration: 3, sums: vec![0.125, 0.0, 2.0] });
}
