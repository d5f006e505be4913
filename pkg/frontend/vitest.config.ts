import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    // The integration suite spawns the Python API server; give startup
    // and teardown generous room so slow machines don't flake.
    testTimeout: 30_000,
    hookTimeout: 60_000,
  },
});
