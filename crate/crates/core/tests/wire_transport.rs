//! Transport behavior over real loopback sockets: round-robin dispatch,
//! fair queuing, end-of-stream broadcast, and connect retries.

use std::collections::HashMap;
use std::time::Duration;

use streamshield::wire::{Endpoint, Frame, PullEvent, PullSocket, PushSocket, WireError};

const CONNECT: Duration = Duration::from_secs(10);

fn wait_for_peers(push: &PushSocket, n: usize) {
    let deadline = std::time::Instant::now() + Duration::from_secs(5);
    while push.peer_count() < n {
        assert!(std::time::Instant::now() < deadline, "peers never connected");
        std::thread::sleep(Duration::from_millis(5));
    }
}

#[test]
fn round_robin_splits_frames_equally() {
    let push = PushSocket::bind(&Endpoint::new("*", 0)).unwrap();
    let ep = Endpoint::loopback(push.local_port().unwrap());
    let pulls: Vec<PullSocket> = (0..3).map(|_| PullSocket::connect(&ep, CONNECT).unwrap()).collect();
    wait_for_peers(&push, 3);

    for seq in 0..6000u64 {
        push.send(&Frame::data(0, seq, vec![1, 2, 3])).unwrap();
    }
    push.close();

    for pull in &pulls {
        let mut count = 0;
        let mut last_seq = None;
        loop {
            match pull.recv() {
                Ok(frame) => {
                    // Round-robin preserves per-connection order.
                    if let Some(last) = last_seq {
                        assert!(frame.seq_no > last);
                    }
                    last_seq = Some(frame.seq_no);
                    count += 1;
                }
                Err(WireError::SocketClosed) => break,
                Err(e) => panic!("{e}"),
            }
        }
        assert_eq!(count, 2000);
    }
}

#[test]
fn end_of_stream_is_broadcast_to_all_peers() {
    let push = PushSocket::bind(&Endpoint::new("*", 0)).unwrap();
    let ep = Endpoint::loopback(push.local_port().unwrap());
    let pulls: Vec<PullSocket> = (0..2).map(|_| PullSocket::connect(&ep, CONNECT).unwrap()).collect();
    wait_for_peers(&push, 2);

    push.send(&Frame::data(7, 0, vec![9])).unwrap();
    push.send(&Frame::end_of_stream(7, 1)).unwrap();
    push.close();

    let mut data_frames = 0;
    let mut eos_frames = 0;
    for pull in &pulls {
        loop {
            match pull.recv() {
                Ok(frame) if frame.is_end_of_stream() => eos_frames += 1,
                Ok(_) => data_frames += 1,
                Err(WireError::SocketClosed) => break,
                Err(e) => panic!("{e}"),
            }
        }
    }
    assert_eq!(data_frames, 1);
    assert_eq!(eos_frames, 2);
}

#[test]
fn fair_queuing_interleaves_prefilled_connections() {
    let pull = PullSocket::bind(&Endpoint::new("*", 0)).unwrap();
    let ep = Endpoint::loopback(pull.local_port().unwrap());

    let per_sender = 200u64;
    let senders: Vec<_> = (0..3u32)
        .map(|stream_id| {
            let ep = ep.clone();
            std::thread::spawn(move || {
                let push = PushSocket::connect(std::slice::from_ref(&ep), CONNECT).unwrap();
                for seq in 0..per_sender {
                    push.send(&Frame::data(stream_id, seq, vec![0; 16])).unwrap();
                }
                push.close();
            })
        })
        .collect();
    for sender in senders {
        sender.join().unwrap();
    }
    // Let the reader threads move everything into the queues so the
    // rotation below runs over fully loaded queues.
    std::thread::sleep(Duration::from_millis(500));

    let mut order: Vec<u32> = Vec::new();
    let mut last_seq: HashMap<u32, u64> = HashMap::new();
    let mut closes = 0;
    while closes < 3 {
        match pull.recv_event().unwrap() {
            PullEvent::Frame(frame) => {
                // Per-connection FIFO: sequence numbers never go backwards.
                if let Some(last) = last_seq.get(&frame.stream_id) {
                    assert!(frame.seq_no > *last);
                }
                last_seq.insert(frame.stream_id, frame.seq_no);
                order.push(frame.stream_id);
            }
            PullEvent::UpstreamClosed => closes += 1,
        }
    }
    assert_eq!(order.len(), 3 * per_sender as usize);

    // With all queues loaded, the rotation serves each connection once per
    // cycle: every aligned window of three holds three distinct senders.
    for window in order.chunks(3) {
        let mut ids: Vec<u32> = window.to_vec();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), window.len(), "unfair window {window:?}");
    }
}

#[test]
fn connect_retries_until_late_bind() {
    let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = probe.local_addr().unwrap().port();
    drop(probe);
    let ep = Endpoint::loopback(port);

    let binder = {
        let ep = ep.clone();
        std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(300));
            let pull = PullSocket::bind(&ep).unwrap();
            pull.recv().unwrap()
        })
    };
    // The push side starts first and retries until the listener appears.
    let push = PushSocket::connect(std::slice::from_ref(&ep), CONNECT).unwrap();
    push.send(&Frame::data(1, 0, vec![42])).unwrap();
    let received = binder.join().unwrap();
    assert_eq!(received.payload, vec![42]);
}

#[test]
fn binding_a_taken_port_fails() {
    let first = PullSocket::bind(&Endpoint::new("*", 0)).unwrap();
    let taken = Endpoint::new("*", first.local_port().unwrap());
    assert!(matches!(
        PullSocket::bind(&taken),
        Err(WireError::BindAddressInUse(_))
    ));
    assert!(matches!(
        PushSocket::bind(&taken),
        Err(WireError::BindAddressInUse(_))
    ));
}

#[test]
fn connect_to_dead_port_times_out() {
    let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = probe.local_addr().unwrap().port();
    drop(probe);
    let err = PullSocket::connect(&Endpoint::loopback(port), Duration::from_millis(200))
        .err()
        .unwrap();
    assert!(matches!(err, WireError::ConnectTimeout(_)));
}

#[test]
fn peer_churn_loses_no_frames() {
    let push = PushSocket::bind(&Endpoint::new("*", 0)).unwrap();
    let ep = Endpoint::loopback(push.local_port().unwrap());

    let drain = |pull: PullSocket| {
        std::thread::spawn(move || {
            let mut count = 0u64;
            loop {
                match pull.recv() {
                    Ok(_) => count += 1,
                    Err(WireError::SocketClosed) => return count,
                    Err(e) => panic!("{e}"),
                }
            }
        })
    };

    let first = PullSocket::connect(&ep, CONNECT).unwrap();
    let retiring = PullSocket::connect(&ep, CONNECT).unwrap();
    wait_for_peers(&push, 2);
    let retiring_handle = {
        std::thread::spawn(move || {
            let mut count = 0u64;
            loop {
                match retiring.recv() {
                    Ok(_) => {
                        count += 1;
                        // Retire mid-stream; everything already sent to
                        // this connection must still arrive.
                        if count == 500 {
                            retiring.retire().unwrap();
                        }
                    }
                    Err(WireError::SocketClosed) => return count,
                    Err(e) => panic!("{e}"),
                }
            }
        })
    };
    let first_handle = drain(first);

    let mut late_handle = None;
    for seq in 0..10_000u64 {
        push.send(&Frame::data(0, seq, vec![0; 32])).unwrap();
        if seq == 4_000 {
            // A third peer joins the rotation mid-run.
            late_handle = Some(drain(PullSocket::connect(&ep, CONNECT).unwrap()));
        }
    }
    push.close();

    let total = first_handle.join().unwrap()
        + retiring_handle.join().unwrap()
        + late_handle.unwrap().join().unwrap();
    assert_eq!(total, 10_000);
}

#[test]
fn dead_peer_is_dropped_and_frame_redispatched() {
    let push = PushSocket::bind(&Endpoint::new("*", 0)).unwrap();
    let ep = Endpoint::loopback(push.local_port().unwrap());
    let doomed = PullSocket::connect(&ep, CONNECT).unwrap();
    wait_for_peers(&push, 1);
    let survivor = PullSocket::connect(&ep, CONNECT).unwrap();
    wait_for_peers(&push, 2);

    drop(doomed);
    std::thread::sleep(Duration::from_millis(100));

    // Every frame still arrives somewhere: the dead peer fails its write,
    // leaves the rotation, and the frame goes to the survivor.
    for seq in 0..100u64 {
        push.send(&Frame::data(0, seq, vec![0; 8])).unwrap();
    }
    push.close();

    let mut received = 0;
    loop {
        match survivor.recv() {
            Ok(_) => received += 1,
            Err(WireError::SocketClosed) => break,
            Err(e) => panic!("{e}"),
        }
    }
    assert_eq!(received, 100);
}
