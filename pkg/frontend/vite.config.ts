import { defineConfig } from "vitest/config";

// Dev server proxies /api to the explanation service so the UI can be
// developed against a live workspace without CORS fuss.
export default defineConfig({
  server: {
    proxy: {
      "/api": "http://127.0.0.1:8787",
    },
  },
  preview: {
    proxy: {
      "/api": "http://127.0.0.1:8787",
    },
  },
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
  },
});
