mod common;

use std::sync::Arc;

use common::{gateway_config, World};
use proptest::prelude::*;
use taxoseek::baselines::{
    build_embedding_index, pure_llm_retrieve, rewrite_retrieve, service_text, topk_retrieve, BaselineError,
    DatasetShape, EmbeddingIndex,
};
use taxoseek::gateway::mock::{ScriptedChat, ScriptedEmbedder};
use taxoseek::gateway::{Gateway, GatewayConfig};

fn gw(chat: Arc<ScriptedChat>, embed: Arc<ScriptedEmbedder>, cfg: GatewayConfig) -> Gateway {
    Gateway::new(chat, cfg).with_embedder(embed)
}

#[test]
fn full_context_makes_exactly_one_call() {
    let w = World::new(2, 2, 30);
    let reg = w.registry();
    let chat = Arc::new(ScriptedChat::new().default_reply("s0003, s0007, s9999, s0003").record_prompts());
    let g = gw(chat.clone(), Arc::new(ScriptedEmbedder::new("e", 8)), gateway_config());
    let r = pure_llm_retrieve(&g, &reg, "find things").unwrap();
    assert_eq!(r.service_ids, ["s0003", "s0007"]);
    assert_eq!(r.unknown_ids, 1);
    assert_eq!(r.cost.calls, 1);
    let calls = chat.calls();
    assert_eq!(calls.len(), 1);
    for s in reg.iter() {
        assert!(calls[0].user_prompt.contains(&format!("{} | {}", s.id, s.name)));
    }
}

#[test]
fn unreadable_full_context_reply_is_not_retried() {
    let w = World::new(2, 2, 10);
    let reg = w.registry();
    let chat = Arc::new(ScriptedChat::new().default_reply("I am not sure."));
    let g = gw(chat.clone(), Arc::new(ScriptedEmbedder::new("e", 8)), gateway_config());
    let r = pure_llm_retrieve(&g, &reg, "q").unwrap();
    assert!(r.service_ids.is_empty());
    assert_eq!(chat.invocations(), 1);
}

#[test]
fn index_batches_and_cache_hits() {
    let w = World::new(4, 4, 150);
    let reg = w.registry();
    let embed = Arc::new(ScriptedEmbedder::new("e", 16));
    let g = gw(Arc::new(ScriptedChat::new()), embed.clone(), gateway_config());
    let a = build_embedding_index(&g, &reg).unwrap();
    assert_eq!(embed.backend_calls(), 3);
    let b = build_embedding_index(&g, &reg).unwrap();
    assert_eq!(a, b);
    assert_eq!(embed.backend_calls(), 3);
    let snap = g.meter().snapshot();
    assert_eq!((snap.embed_texts, snap.embed_cache_hits), (300, 150));
    assert_eq!(snap.total_calls, 0);
    assert!(a.vectors.iter().all(|v| (v.iter().map(|x| x * x).sum::<f32>().sqrt() - 1.0).abs() < 1e-5));
}

#[test]
fn disk_cache_survives_a_new_gateway() {
    let dir = tempfile::tempdir().unwrap();
    let w = World::new(2, 2, 20);
    let reg = w.registry();
    let cfg = GatewayConfig {
        embed_cache_dir: Some(dir.path().to_owned()),
        ..gateway_config()
    };
    let first = Arc::new(ScriptedEmbedder::new("e", 8));
    let a = build_embedding_index(&gw(Arc::new(ScriptedChat::new()), first.clone(), cfg.clone()), &reg).unwrap();
    assert_eq!(first.texts_embedded(), 20);
    let second = Arc::new(ScriptedEmbedder::new("e", 8));
    let b = build_embedding_index(&gw(Arc::new(ScriptedChat::new()), second.clone(), cfg), &reg).unwrap();
    assert_eq!(second.backend_calls(), 0);
    assert_eq!(a, b);
}

#[test]
fn top_k_uses_scripted_similarities() {
    let w = World::new(1, 2, 4);
    let reg = w.registry();
    let mut e = ScriptedEmbedder::new("e", 2).vector("needle", vec![1.0, 0.0]);
    let dirs = [[0.0, 1.0], [1.0, 0.1], [0.6, 0.8], [1.0, 0.1]];
    for (s, d) in reg.iter().zip(dirs) {
        e = e.vector(&service_text(s), d.to_vec());
    }
    let g = gw(Arc::new(ScriptedChat::new()), Arc::new(e), gateway_config());
    let index = build_embedding_index(&g, &reg).unwrap();
    let r = topk_retrieve(&g, &index, "needle", 3).unwrap();
    assert_eq!(r.service_ids, ["s0001", "s0003", "s0002"]);
    assert_eq!(r.cost.calls, 0);
    assert!(matches!(topk_retrieve(&g, &index, "needle", 0), Err(BaselineError::ZeroK)));
    assert_eq!(topk_retrieve(&g, &index, "needle", 50).unwrap().service_ids.len(), 4);
}

#[test]
fn rewrite_embeds_the_tool_line() {
    let w = World::new(1, 2, 4);
    let reg = w.registry();
    let e = ScriptedEmbedder::new("e", 2)
        .vector(&service_text(&reg.services()[2]), vec![0.0, 1.0])
        .vector("look up hotel rooms", vec![0.0, 1.0]);
    let chat = Arc::new(ScriptedChat::new().default_reply(
        "Sure.\n<tool_assistant>\nserver: [lodging]\ntool: [look up hotel rooms]\n</tool_assistant>",
    ));
    let g = gw(chat.clone(), Arc::new(e), gateway_config());
    let index = build_embedding_index(&g, &reg).unwrap();
    let r = rewrite_retrieve(&g, &index, "I need a place to sleep", 1).unwrap();
    assert_eq!(r.service_ids, ["s0002"]);
    assert!(!r.fallback);
    assert_eq!(r.rewrite.unwrap().server_hint, "lodging");
    assert_eq!((r.cost.calls, chat.invocations()), (1, 1));
}

#[test]
fn rewrite_without_a_tool_line_falls_back_to_the_query() {
    let w = World::new(1, 2, 4);
    let reg = w.registry();
    let chat = Arc::new(ScriptedChat::new().default_reply("no block here"));
    let embed = Arc::new(ScriptedEmbedder::new("e", 32));
    let g = gw(chat.clone(), embed, gateway_config());
    let index = build_embedding_index(&g, &reg).unwrap();
    let r = rewrite_retrieve(&g, &index, "raw words", 2).unwrap();
    let direct = topk_retrieve(&g, &index, "raw words", 2).unwrap();
    assert!(r.fallback);
    assert_eq!(r.service_ids, direct.service_ids);
    assert_eq!(chat.invocations(), 1);
}

#[test]
fn model_mismatch_is_reported() {
    let w = World::new(1, 2, 4);
    let reg = w.registry();
    let g = gw(Arc::new(ScriptedChat::new()), Arc::new(ScriptedEmbedder::new("old", 8)), gateway_config());
    let index = build_embedding_index(&g, &reg).unwrap();
    let other = gw(Arc::new(ScriptedChat::new()), Arc::new(ScriptedEmbedder::new("new", 8)), gateway_config());
    assert!(matches!(
        topk_retrieve(&other, &index, "q", 1),
        Err(BaselineError::ModelMismatch { .. })
    ));
}

#[test]
fn dataset_defaults() {
    assert_eq!(DatasetShape::ToolRet.default_k(), 5);
    assert_eq!(DatasetShape::PublicMcp.default_k(), 10);
    assert_eq!("public-mcp".parse::<DatasetShape>().unwrap(), DatasetShape::PublicMcp);
}

fn unit(v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-6);
    v.into_iter().map(|x| x / n).collect()
}

proptest! {
    #[test]
    fn top_k_matches_brute_force(
        rows in prop::collection::vec(prop::collection::vec(-4i8..5, 3), 1..40),
        q in prop::collection::vec(-4i8..5, 3),
        k in 1usize..50,
    ) {
        let vectors: Vec<Vec<f32>> = rows.iter().map(|r| unit(r.iter().map(|&x| x as f32).collect())).collect();
        let query = unit(q.iter().map(|&x| x as f32).collect());
        let index = EmbeddingIndex {
            ids: (0..vectors.len()).map(|i| format!("s{i}")).collect(),
            vectors: vectors.clone(),
            model: "m".into(),
        };
        let got: Vec<String> = index.top_k(&query, k).unwrap().into_iter().map(|(id, _)| id).collect();
        let mut scored: Vec<(f32, usize)> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (v.iter().zip(&query).map(|(a, b)| a * b).sum(), i))
            .collect();
        // Stable sort by descending score keeps earlier ids first on ties.
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let want: Vec<String> = scored.iter().take(k).map(|(_, i)| format!("s{i}")).collect();
        prop_assert_eq!(got, want);
    }
}
