use canvas_core::protocol::{decode_frame, encode_frame, RequestOp, WorkerRequest, WorkerResponse};
use canvas_runtime::worker::{read_frame, Connection};
use serde_json::json;
use tokio::io::{duplex, AsyncWriteExt, BufReader};

/// A worker that echoes each execute request's code back as its result,
/// after all requests of a batch have arrived.
#[tokio::test]
async fn pipelined_responses_pair_with_requests() {
    let (client, worker) = duplex(1 << 16);
    let (cr, cw) = tokio::io::split(client);
    let (wr, mut ww) = tokio::io::split(worker);
    let fake = tokio::spawn(async move {
        let mut reader = BufReader::new(wr);
        let mut seen = Vec::new();
        for _ in 0..20 {
            let frame = read_frame(&mut reader).await.unwrap().unwrap();
            seen.push(decode_frame::<WorkerRequest>(&frame).unwrap());
        }
        for req in seen {
            let RequestOp::Execute { code } = req.op else { panic!("unexpected op") };
            let resp = WorkerResponse {
                id: req.id,
                ok: true,
                payload: json!({"stdout": "", "stderr": "", "result_repr": code, "rich": [], "error": null}),
            };
            ww.write_all(&encode_frame(&resp)).await.unwrap();
        }
    });

    let mut conn = Connection::new(BufReader::new(cr), cw);
    let mut ids = Vec::new();
    for i in 0..20 {
        ids.push(conn.send(RequestOp::Execute { code: format!("c{i}") }).await.unwrap());
    }
    for (i, id) in ids.into_iter().enumerate() {
        let resp = conn.recv().await.unwrap();
        assert_eq!(resp.id, id);
        assert_eq!(resp.payload["result_repr"], format!("c{i}"));
    }
    fake.await.unwrap();
}
