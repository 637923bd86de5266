import { ReviewApiClient } from "./api.js";
import { ReviewApp } from "./app.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const app = new ReviewApp(root, new ReviewApiClient(""));
void app.start();
