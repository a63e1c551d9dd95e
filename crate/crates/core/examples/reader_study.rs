//! Run the reader-study service in-process and walk one dentist through a
//! small study over HTTP, then export the results.

use std::sync::Arc;

use serde_json::{json, Value};

use dentvqa::client::SystemClock;
use dentvqa::domain::TaskRegistry;
use dentvqa::study::http::{serve, CreateStudy, ServiceState, TOKEN_HEADER};
use dentvqa::study::{Arm, Dentist, StudyDesign, Tier};
use dentvqa::synthetic;

fn main() {
    let registry = TaskRegistry::default();
    let state = Arc::new(ServiceState::new(Arc::new(SystemClock::new()), registry.clone()));
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(serve(state, "127.0.0.1:0".parse().unwrap(), move |a| tx.send(a).unwrap())).unwrap();
    });
    let base = format!("http://{}", rx.recv().unwrap());
    let agent: ureq::Agent =
        ureq::Agent::config_builder().http_status_as_error(false).max_idle_connections(0).build().into();
    let post = |path: &str, token: Option<&str>, body: Value| -> Value {
        let mut req = agent.post(format!("{base}{path}"));
        if let Some(t) = token {
            req = req.header(TOKEN_HEADER, t);
        }
        req.send_json(body).unwrap().body_mut().read_json().unwrap()
    };

    let create = CreateStudy {
        study_id: "demo".into(),
        design: StudyDesign {
            items_per_task: 1,
            gv_subsets: 0,
            repeat_fraction: 0.0,
            arms: vec![Arm::Independent, Arm::Rating],
            ..StudyDesign::default()
        },
        items: synthetic::study_pool(&registry, 2, 0.8, 1),
        dentists: vec![Dentist { dentist_id: "d1".into(), tier: Tier::Junior }],
        seed: 1,
    };
    println!("created: {}", post("/v1/studies", None, serde_json::to_value(&create).unwrap()));
    let token =
        post("/v1/studies/demo/enroll", None, json!({ "dentist_id": "d1" }))["token"].as_str().unwrap().to_string();

    let mut answered = 0;
    loop {
        let next: Value = agent
            .get(format!("{base}/v1/studies/demo/next"))
            .header(TOKEN_HEADER, &token)
            .call()
            .unwrap()
            .body_mut()
            .read_json()
            .unwrap();
        if next["status"] == "complete" {
            break;
        }
        let item = format!("/v1/studies/demo/sessions/{}/items/{}", next["session_id"].as_str().unwrap(), next["seq"]);
        post(&format!("{item}/start"), Some(&token), json!({}));
        if next.get("rating_form").is_some() {
            let rating = json!({ "item_id": next["item_id"], "accuracy": 3, "correctness": 4, "completeness": 4,
                                 "fairness": 5, "faithfulness": 4, "acceptability": 4 });
            post(&format!("{item}/rating"), Some(&token), rating);
        } else {
            let answer = json!({ "answer": { "answer": next["label_space"][0] }, "confidence": "medium" });
            post(&format!("{item}/response"), Some(&token), answer);
        }
        answered += 1;
    }
    println!("submitted {answered} items");
    let export = post("/v1/studies/demo/export", None, json!({}));
    for s in export["summaries"].as_array().unwrap().iter().filter(|s| s["task_id"].is_null()) {
        println!("{} {}: accuracy {} hit rate {} (n = {})", s["arm"], s["tier"], s["accuracy"], s["hit_rate"], s["n"]);
    }
}
