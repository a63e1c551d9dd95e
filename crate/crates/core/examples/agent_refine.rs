//! Two-model interaction loop: a diagnostic model answers the first question,
//! a refiner rewrites the reply and answers follow-ups with the history.

use dentvqa::agent::{collect_ratings, run_round, AgentConfig, Conversation, InteractionRating, Speaker};
use dentvqa::client::{ChatRequest, ClientError, FnClient, ImageRef, ScriptedClient};
use dentvqa::domain::Language;

fn main() {
    let diagnostic =
        ScriptedClient::from_pairs([("c1/r1/diagnostic", "Yes. Caries is present on the lower left posterior teeth.")]);
    let refiner = FnClient(|req: &ChatRequest| -> Result<String, ClientError> {
        let prompt = &req.messages[0].content;
        Ok(if req.request_id.ends_with("r1/refiner") {
            "The image shows tooth decay on your lower left back teeth. A dentist should check it soon.".into()
        } else {
            assert!(prompt.contains("tooth decay"), "history reaches the refiner");
            "A filling is the usual treatment when decay is caught at this stage.".into()
        })
    });

    let config = AgentConfig::default();
    let mut conv =
        Conversation::new("c1", Language::En, "Do I have any cavities?", ImageRef::Uri("images/P0001-INL.png".into()));
    conv = run_round(&conv, &diagnostic, &refiner, &config).unwrap();
    conv.ask("What treatment would I need?");
    conv = run_round(&conv, &diagnostic, &refiner, &config).unwrap();

    for t in &conv.turns {
        let who = match t.speaker {
            Speaker::User => "user",
            Speaker::Diagnostic => "diagnostic",
            Speaker::Refiner => "refiner",
        };
        println!("{who:>10}: {}", t.text);
    }
    println!("rounds {}, degraded {}", conv.round_count, conv.degraded);

    let ratings = [
        InteractionRating { conversation_id: "c1".into(), rater: "d1".into(), scores: [5, 4, 5, 5, 4, 5, 5] },
        InteractionRating { conversation_id: "c1".into(), rater: "d2".into(), scores: [4, 4, 5, 4, 4, 5, 4] },
    ];
    for s in collect_ratings(&ratings).unwrap() {
        println!("{:>13}: mean {:.1}", s.dimension, s.mean);
    }
}
