import { ApiClient } from "./api.js";
import { ChatApp } from "./app.js";

declare global {
  interface Window {
    GENPOD_CHAT_URL?: string;
    GENPOD_IDP_PROVIDERS?: string[];
  }
}

function chatUrl(): string {
  if (window.GENPOD_CHAT_URL) {
    return window.GENPOD_CHAT_URL;
  }
  const meta = document.querySelector('meta[name="genpod-chat-url"]');
  return meta?.getAttribute("content") ?? "http://127.0.0.1:7004";
}

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app root element");
}
const app = new ChatApp(root, new ApiClient(chatUrl()), {
  idpProviders: window.GENPOD_IDP_PROVIDERS ?? [""],
});
void app.start();
