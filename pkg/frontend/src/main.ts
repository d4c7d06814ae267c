import { boot } from "./app";

boot().catch((err) => {
  const banner = document.getElementById("banner");
  if (banner) {
    banner.textContent = `failed to load workspace: ${err.message}`;
    (banner as HTMLElement).style.display = "block";
  }
});
