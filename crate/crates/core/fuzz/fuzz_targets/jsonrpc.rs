#![no_main]

use std::sync::{Arc, OnceLock};

use libfuzzer_sys::fuzz_target;
use ragway_core::gateway::mock::MockStack;
use ragway_core::pipeline::{Pipeline, PipelineConfig};
use ragway_core::prompts::PromptCatalog;
use ragway_core::retrieval::HybridIndex;
use ragway_mcp::McpServer;

fn server() -> &'static McpServer {
    static SERVER: OnceLock<McpServer> = OnceLock::new();
    SERVER.get_or_init(|| {
        let p = Pipeline::new(
            PipelineConfig::default(),
            MockStack::default().gateway(),
            PromptCatalog::default(),
            HybridIndex::default(),
        )
        .unwrap();
        McpServer::new(Arc::new(p))
    })
}

fuzz_target!(|data: &str| {
    if let Some(out) = server().handle_request(data) {
        let v: serde_json::Value = serde_json::from_str(&out).expect("response is JSON");
        assert_eq!(v["jsonrpc"], "2.0");
        assert!(v.get("result").is_some() != v.get("error").is_some());
    }
});
