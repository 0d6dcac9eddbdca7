use std::io::{BufRead, BufReader, Write};
use std::os::unix::net::UnixListener;
use std::path::PathBuf;
use std::thread;

use patchview_core::detector::{
    run_stub_server, BridgeClient, BridgeConfig, BridgeDetector, BridgeError, CannedReplies,
    Detection, Detector, DetectorError,
};
use patchview_core::imaging::{BBox, ImageBuffer};

const CANNED: &str = r#"{
  "frame_a": [{"xmin":1,"ymin":2,"xmax":11,"ymax":22,"objectness":0.9,"class":"person"}],
  "frame_b": [
    {"xmin":0,"ymin":0,"xmax":5,"ymax":5,"objectness":0.25,"class":"person"},
    {"xmin":3,"ymin":3,"xmax":9,"ymax":8,"objectness":0.5,"class":"person"}
  ]
}"#;

/// Client talking to an in-process stub server over a pair of pipes.
fn loopback(canned: &str) -> (BridgeClient, thread::JoinHandle<()>) {
    let canned = CannedReplies::parse(canned).unwrap();
    let (req_r, req_w) = std::io::pipe().unwrap();
    let (rep_r, rep_w) = std::io::pipe().unwrap();
    let server =
        thread::spawn(move || run_stub_server(BufReader::new(req_r), rep_w, &canned).unwrap());
    (
        BridgeClient::from_streams(BufReader::new(rep_r), req_w),
        server,
    )
}

#[test]
fn stub_round_trip_over_pipes() {
    let (mut client, server) = loopback(CANNED);
    let got = client
        .detect(&[
            PathBuf::from("x/frame_a.png"),
            PathBuf::from("unknown.png"),
            PathBuf::from("frame_b.png"),
        ])
        .unwrap();
    assert_eq!(got.len(), 3);
    assert_eq!(
        got[0],
        vec![Detection::person(
            BBox::new(1.0, 2.0, 11.0, 22.0).unwrap(),
            0.9
        )]
    );
    assert!(got[1].is_empty());
    assert_eq!(got[2].len(), 2);
    assert_eq!(got[2][1].objectness, 0.5);

    // Request ids advance and stay matched.
    for _ in 0..3 {
        assert_eq!(
            client
                .detect(&[PathBuf::from("frame_a.png")])
                .unwrap()
                .len(),
            1
        );
    }
    drop(client);
    server.join().unwrap();
}

#[test]
fn malformed_canned_reply_is_a_protocol_error() {
    let bad = r#"{"frame_a": [{"xmin":1,"ymin":2,"xmax":11,"ymax":22,"class":"person"}]}"#;
    let (mut client, server) = loopback(bad);
    let err = client.detect(&[PathBuf::from("frame_a.png")]).unwrap_err();
    assert!(
        matches!(&err, BridgeError::ProtocolError(m) if m.contains("objectness")),
        "{err}"
    );
    drop(client);
    server.join().unwrap();

    let out_of_range =
        r#"{"f": [{"xmin":1,"ymin":2,"xmax":11,"ymax":22,"objectness":1.5,"class":"person"}]}"#;
    let (mut client, server) = loopback(out_of_range);
    assert!(matches!(
        client.detect(&[PathBuf::from("f.png")]),
        Err(BridgeError::ProtocolError(_))
    ));
    drop(client);
    server.join().unwrap();
}

/// Server that answers every request with `reply` verbatim.
fn scripted(reply: &'static str) -> (BridgeClient, thread::JoinHandle<()>) {
    let (req_r, req_w) = std::io::pipe().unwrap();
    let (rep_r, mut rep_w) = std::io::pipe().unwrap();
    let server = thread::spawn(move || {
        for line in BufReader::new(req_r).lines() {
            if line.is_err() {
                break;
            }
            if writeln!(rep_w, "{reply}").is_err() {
                break;
            }
        }
    });
    (
        BridgeClient::from_streams(BufReader::new(rep_r), req_w),
        server,
    )
}

#[test]
fn broken_servers_are_reported() {
    let cases: [(&str, fn(&BridgeError) -> bool); 5] = [
        ("garbage", |e| matches!(e, BridgeError::ProtocolError(_))),
        (r#"{"v":1,"id":99,"detections":[[]]}"#, |e| {
            matches!(e, BridgeError::ProtocolError(_))
        }),
        (r#"{"v":1,"id":1,"detections":[[],[]]}"#, |e| {
            matches!(e, BridgeError::ProtocolError(_))
        }),
        (r#"{"v":7,"id":1,"detections":[[]]}"#, |e| {
            matches!(e, BridgeError::VersionMismatch { got: 7 })
        }),
        (r#"{"v":1,"id":1,"error":"model not loaded"}"#, |e| {
            matches!(e, BridgeError::Remote(_))
        }),
    ];
    for (reply, check) in cases {
        let (mut client, server) = scripted(reply);
        let err = client.detect(&[PathBuf::from("a.png")]).unwrap_err();
        assert!(check(&err), "{reply}: {err}");
        drop(client);
        server.join().unwrap();
    }
}

#[test]
fn closed_connection_is_unavailable() {
    let (req_r, req_w) = std::io::pipe().unwrap();
    let (rep_r, rep_w) = std::io::pipe().unwrap();
    drop(rep_w);
    let mut client = BridgeClient::from_streams(BufReader::new(rep_r), req_w);
    assert!(matches!(
        client.detect(&[PathBuf::from("a.png")]),
        Err(BridgeError::BridgeUnavailable(_))
    ));
    drop(req_r);
}

#[test]
fn missing_socket_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = BridgeConfig::parse(&format!("unix:{}", dir.path().join("none.sock").display()));
    assert!(matches!(
        BridgeClient::connect(&cfg),
        Err(BridgeError::BridgeUnavailable(_))
    ));
}

#[test]
fn detector_over_unix_socket_uses_given_names() {
    let dir = tempfile::tempdir().unwrap();
    let sock = dir.path().join("bridge.sock");
    let listener = UnixListener::bind(&sock).unwrap();
    let canned = CannedReplies::parse(CANNED).unwrap();
    let server = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let read = stream.try_clone().unwrap();
        run_stub_server(BufReader::new(read), stream, &canned).unwrap();
    });

    let det =
        BridgeDetector::connect(&BridgeConfig::parse(&format!("unix:{}", sock.display()))).unwrap();
    assert!(!det.capabilities().grad);
    let img = ImageBuffer::filled(8, 8, [0.5; 3]).unwrap();
    let names = vec!["frame_b".to_string(), "frame_c".to_string()];
    let got = det.detect_batch_named(&names, &[&img, &img]).unwrap();
    assert_eq!(got[0].len(), 2);
    assert!(got[1].is_empty());
    assert!(matches!(
        det.max_objectness_grad(&img),
        Err(DetectorError::NotGradCapable)
    ));
    drop(det);
    server.join().unwrap();
}

#[test]
fn command_bridge_that_exits_immediately() {
    let cfg = BridgeConfig::parse("exit 0");
    let mut client = BridgeClient::connect(&cfg).unwrap();
    assert!(matches!(
        client.detect(&[PathBuf::from("a.png")]),
        Err(BridgeError::BridgeUnavailable(_))
    ));
}
