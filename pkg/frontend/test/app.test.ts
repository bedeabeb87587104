import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { makeFakeService } from "./fake_service.js";
import { currentImageSrc, makeApp, turnElements } from "./shell.js";

const CAN = "Please exchange the position of the large red rubber cube and the small blue metal cylinder.";
const FORBIDDEN = "Please put the small gray metal sphere under the small blue metal cylinder.";
const CANNOT = "Please exchange the color of the large red rubber cube and the small yellow metal cylinder.";

describe("scripted chat session against the service contract", () => {
  beforeEach(() => {
    vi.stubGlobal("fetch", makeFakeService());
    window.location.hash = "";
  });
  afterEach(() => {
    vi.unstubAllGlobals();
  });

  it("boot populates the scene picker from the server", async () => {
    const app = makeApp();
    await app.boot();
    const thumbs = document.querySelectorAll("#scene-gallery .scene-thumb");
    expect(thumbs.length).toBe(1);
    expect((thumbs[0] as HTMLElement).dataset.sceneId).toBe("fake-scene");
  });

  it("a can turn shows the new image and advances the working image", async () => {
    const app = makeApp();
    await app.boot();
    await app.startFromScene("fake-scene");
    const before = currentImageSrc();
    await app.send(CAN);
    const turns = turnElements();
    expect(turns.length).toBe(1);
    expect(turns[0].badge).toBe("accepted");
    expect(turns[0].hasAfterImage).toBe(true);
    expect(currentImageSrc()).not.toBe(before);
    expect(currentImageSrc()).toContain("RECREATION-1");
  });

  it("rejection turns show a badge and explanation, and no new image", async () => {
    const app = makeApp();
    await app.boot();
    await app.startFromScene("fake-scene");
    const before = currentImageSrc();
    await app.send(FORBIDDEN);
    await app.send(CANNOT);
    const turns = turnElements();
    expect(turns[0].badge).toBe("forbidden");
    expect(turns[0].answer).toMatch(/^This action is forbidden\./);
    expect(turns[0].hasAfterImage).toBe(false);
    expect(turns[1].badge).toBe("cannot");
    expect(turns[1].answer).toMatch(/^This action cannot be done\./);
    expect(currentImageSrc()).toBe(before); // rejections never advance the image
  });

  it("send box is disabled while a request is pending", async () => {
    const app = makeApp();
    await app.boot();
    await app.startFromScene("fake-scene");
    const promise = app.send(CAN);
    expect((document.getElementById("send") as HTMLButtonElement).disabled).toBe(true);
    await promise;
    expect((document.getElementById("send") as HTMLButtonElement).disabled).toBe(false);
  });

  it("oov errors surface the offending word inline", async () => {
    const app = makeApp();
    await app.boot();
    await app.startFromScene("fake-scene");
    await app.send("Please put the banana on top of the sphere.");
    const errorBox = document.getElementById("error-box")!;
    expect(errorBox.style.display).not.toBe("none");
    expect(errorBox.textContent).toContain("banana");
    expect(turnElements().length).toBe(0);
  });

  it("non-png uploads are rejected before any request", async () => {
    let requests = 0;
    const fake = makeFakeService();
    vi.stubGlobal("fetch", (input: RequestInfo | URL, init?: RequestInit) => {
      requests += 1;
      return fake(input, init);
    });
    const app = makeApp();
    await app.startFromUpload(
      new File([new Uint8Array([1, 2, 3])], "photo.jpg", { type: "image/jpeg" }),
    );
    expect(requests).toBe(0);
    expect(document.getElementById("error-box")!.textContent).toContain("PNG");
  });

  it("refresh rebuilds the identical turn list from history", async () => {
    const app = makeApp();
    await app.boot();
    await app.startFromScene("fake-scene");
    await app.send(CAN);
    await app.send(FORBIDDEN);
    const beforeRefresh = turnElements();
    const sessionId = app.state.sessionId!;

    // a fresh app instance resuming the same session (what a reload does)
    const app2 = makeApp();
    await app2.resume(sessionId);
    expect(turnElements()).toEqual(beforeRefresh);
    expect(app2.state.currentImage).toBe(app.state.currentImage);
  });

  it("before/after toggle shows the pre-action image side by side", async () => {
    const app = makeApp();
    await app.boot();
    await app.startFromScene("fake-scene");
    await app.send(CAN);
    (document.querySelector(".toggle-before") as HTMLButtonElement).click();
    expect(document.querySelector(".before-image")).not.toBeNull();
    (document.querySelector(".toggle-before") as HTMLButtonElement).click();
    expect(document.querySelector(".before-image")).toBeNull();
  });
});
