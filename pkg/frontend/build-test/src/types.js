// Wire types for the engine's /api/v1 JSON payloads. The console renders
// these verbatim; it never invents client-side state.
export {};
