#!/usr/bin/env node
/** Entry point: `node dist/main.js --stdio`. */

import { serve } from "./server.js";

async function main(): Promise<void> {
  if (!process.argv.includes("--stdio")) {
    process.stderr.write(
      "usage: main.js --stdio  (newline-delimited vps/1 JSON frames on stdin/stdout)\n",
    );
    process.exit(1);
  }
  process.on("SIGTERM", () => process.exit(0));
  process.stderr.write("vps-sidecar ready (vps/1)\n");
  await serve();
}

main();
