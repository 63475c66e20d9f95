import { defineConfig } from "vitest/config";

// One CPU, and two test files spawn their own servers: run files serially.
export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    fileParallelism: false,
    testTimeout: 120_000,
    hookTimeout: 900_000,
  },
});
