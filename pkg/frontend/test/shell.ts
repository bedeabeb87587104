// Loads the real index.html body into the happy-dom document and builds
// an App over a given fetch implementation.
import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { ApiClient } from "../src/api.js";
import { App, wire } from "../src/ui.js";

export function mountShell(): void {
  const root = join(dirname(fileURLToPath(import.meta.url)), "..");
  const html = readFileSync(join(root, "index.html"), "utf-8");
  const body = html.match(/<body>([\s\S]*)<\/body>/)![1];
  document.body.innerHTML = body.replace(/<script[\s\S]*?<\/script>/g, "");
}

export function makeApp(base = ""): App {
  mountShell();
  const app = new App(new ApiClient(base), document);
  wire(app, document);
  return app;
}

export function turnElements() {
  return Array.from(document.querySelectorAll("#turns .turn")).map((el) => ({
    instruction: el.querySelector(".instruction")?.textContent ?? "",
    badge: el.querySelector(".badge")?.textContent ?? "",
    answer: el.querySelector(".answer")?.textContent ?? "",
    hasAfterImage: el.querySelector(".after-image") !== null,
  }));
}

export function currentImageSrc(): string {
  return (document.getElementById("current-image") as HTMLImageElement).src;
}
