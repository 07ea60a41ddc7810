// Plain object instead of defineConfig so the config file loads even when
// vitest is provided by a global install rather than node_modules.
export default {
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    // integration tests pass their own generous timeouts; this is the cap
    // for the mocked-fetch unit tests
    testTimeout: 20_000,
    hookTimeout: 150_000,
  },
};
