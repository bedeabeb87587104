import { defineConfig } from "vitest/config";

// The live suite loads the page "from" the running service, so the
// document origin must match ATVC_SERVICE_URL for same-origin fetches.
export default defineConfig({
  test: {
    environment: "happy-dom",
    environmentOptions: {
      happyDOM: {
        url: process.env.ATVC_SERVICE_URL ?? "http://localhost:8008",
      },
    },
    include: ["test/**/*.test.ts"],
  },
});
