import { ApiClient } from "./api.js";
import { App, wire } from "./ui.js";

const app = new App(new ApiClient(""), document);
wire(app, document);
void app.boot();

declare global {
  interface Window {
    atvcApp: App;
  }
}
window.atvcApp = app;
