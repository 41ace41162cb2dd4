import { defineConfig } from "vitest/config";

export default defineConfig({
  resolve: {
    // sources import sibling modules as "./x.js" (browser ESM); point
    // vitest back at the .ts files
    alias: [{ find: /^(\.{1,2}\/.*)\.js$/, replacement: "$1" }],
  },
  test: {
    include: ["test/**/*.test.ts"],
    // the integration test spawns the python sim service
    testTimeout: 60_000,
    hookTimeout: 60_000,
  },
});
