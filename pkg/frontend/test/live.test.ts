// Scripted session against a live service. Skipped unless the launcher
// provides ATVC_SERVICE_URL (see scripts/live_test.py, which boots the
// service, passes a valid executable instruction for its first scene,
// and runs this file).
import { describe, expect, it } from "vitest";

import { currentImageSrc, makeApp, turnElements } from "./shell.js";

const BASE = process.env.ATVC_SERVICE_URL ?? "";
const CAN = process.env.ATVC_LIVE_CAN_INSTRUCTION ?? "";
const FORBIDDEN =
  process.env.ATVC_LIVE_FORBIDDEN_INSTRUCTION ??
  "Please put the small gray metal sphere under the small purple rubber cylinder.";

describe.skipIf(!BASE)("scripted session against the live service", () => {
  it("performs a can turn, a forbidden turn, and survives refresh", async () => {
    // the document origin is the service itself (vitest.config.ts), so the
    // client runs exactly as served: relative fetches against its own host
    const app = makeApp("");
    await app.boot();
    const thumbs = document.querySelectorAll("#scene-gallery .scene-thumb");
    expect(thumbs.length).toBeGreaterThan(0);
    const sceneId = (thumbs[0] as HTMLElement).dataset.sceneId!;
    await app.startFromScene(sceneId);
    const originalImage = currentImageSrc();

    await app.send(CAN);
    let turns = turnElements();
    expect(turns.length).toBe(1);
    expect(turns[0].badge).toBe("accepted");
    expect(turns[0].hasAfterImage).toBe(true);
    expect(currentImageSrc()).not.toBe(originalImage); // image advanced

    await app.send(FORBIDDEN);
    turns = turnElements();
    expect(turns[1].badge).toBe("forbidden");
    expect(turns[1].answer).toMatch(/^This action is forbidden\. Because /);
    expect(turns[1].hasAfterImage).toBe(false);

    const sessionId = app.state.sessionId!;
    const app2 = makeApp("");
    await app2.resume(sessionId);
    expect(turnElements()).toEqual(turns);
    expect(app2.state.currentImage).toBe(app.state.currentImage);
  });
});
